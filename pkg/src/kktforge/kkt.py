"""Stationarity residuals, multiplier fitting, and (epsilon, delta)-KKT certification.

A parameter vector theta is near-stationary for the max-margin problem when
theta ~ sum_i lambda_i * grad[y_i Phi(theta; x_i)] for some lambda >= 0. This
module measures that residual, recovers the best nonnegative multipliers by
NNLS, and packages the result as a certificate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import net
from .data import LabeledDataset, data_hash
from .errors import (
    HashMismatchError,
    InvalidMultiplierError,
    ShapeError,
    ValidationError,
)

NNLS_TOL_SCALE = 1e-10
NNLS_MAX_ITER = 50_000


def _readonly(a):
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Multipliers:
    """One multiplier per candidate point. Raw attack state may go negative;
    certificates require every entry >= 0."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 1:
            raise ShapeError("multipliers must form a 1-d vector")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite multiplier")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0.0))


@dataclass(frozen=True)
class KKTLossWeights:
    gamma1: float = 1.0
    gamma2: float = 1.0

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValidationError("gamma1 and gamma2 must be positive")


@dataclass(frozen=True)
class KKTCertificate:
    """Measured relaxed-KKT quantities for (params, dataset, multipliers).

    epsilon: stationarity residual norm.
    p:       margin value used for the slack condition.
    delta:   max complementary slack, floored at 0.
    """

    multipliers: Multipliers
    epsilon: float
    p: float
    delta: float
    satisfied_margin: bool


def _as_points_labels(points, labels):
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ShapeError("points and labels must have equal length")
    return X, y


def stationarity_residual(
    params: net.NetworkParams, points, labels, multipliers: Multipliers
) -> tuple[float, np.ndarray]:
    """Residual r = theta - sum_i lambda_i grad[y_i Phi] and its norm."""
    X, y = _as_points_labels(points, labels)
    lam = multipliers.values
    if lam.shape[0] != X.shape[0]:
        raise ShapeError("multiplier count must match the number of points")
    r = net.flatten_params(params) - net.weighted_grad_sum(params, X, y, lam)
    return float(np.linalg.norm(r)), r


def kkt_loss(
    params: net.NetworkParams, points, labels, multipliers: Multipliers,
    weights: KKTLossWeights,
) -> float:
    """gamma1 * ||r||_2 + gamma2 * sum_i max(-lambda_i, 0); the norm is unsquared."""
    norm, _ = stationarity_residual(params, points, labels, multipliers)
    penalty = float(np.maximum(-multipliers.values, 0.0).sum())
    return weights.gamma1 * norm + weights.gamma2 * penalty


def gradient_gram(params: net.NetworkParams, X: np.ndarray, y: np.ndarray):
    """Gram matrix G_ij = <g_i, g_j> of the per-point gradients g_i =
    grad[y_i Phi], plus c_i = <g_i, theta>, without materializing the g_i.

    Uses <g_i, g_j> = y_i y_j [ (x_i.x_j + 1) * sum_j' v_j'^2 s_ij' s_jj'
    + sum_j' relu_ij' relu_jj' ] and the degree-2 Euler identity
    <g_i, theta> = 2 y_i Phi(x_i).
    """
    pre = net.preactivations(params, X)
    mask = pre > 0.0
    relu = np.where(mask, pre, 0.0)
    mv2 = np.where(mask, params.v[None, :] ** 2, 0.0)
    yy = np.outer(y, y)
    gram = yy * ((X @ X.T + 1.0) * (mv2 @ mask.T) + relu @ relu.T)
    c = 2.0 * y * (relu @ params.v)
    return gram, c


def _projected_gradient(lam, grad):
    pg = grad.copy()
    at_bound = lam <= 0.0
    pg[at_bound] = np.minimum(grad[at_bound], 0.0)
    return pg


def _nnls_active_set_polish(gram, c, lam, tol, max_rounds=200):
    """Lawson-Hanson-style finishing rounds on a warm-started support."""
    m = c.shape[0]
    free = lam > 0.0
    for _ in range(max_rounds):
        grad = 2.0 * (gram @ lam - c)
        if np.linalg.norm(_projected_gradient(lam, grad)) <= tol:
            return lam
        entering = np.where(~free & (grad < 0.0))[0]
        if entering.size:
            free[entering[np.argmin(grad[entering])]] = True
        if not free.any():
            return lam
        idx = np.where(free)[0]
        sol = np.zeros(m)
        sol[idx] = np.linalg.lstsq(gram[np.ix_(idx, idx)], c[idx], rcond=None)[0]
        # walk toward sol, dropping coordinates that would cross zero
        inner = 0
        while np.any(sol[idx] <= 0.0) and inner < m + 1:
            inner += 1
            bad = idx[sol[idx] <= 0.0]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = lam[bad] / (lam[bad] - sol[bad])
            ratio = np.where(np.isfinite(ratio), ratio, 0.0)
            t = max(min(ratio.min(), 1.0), 0.0)
            lam = lam + t * (sol - lam)
            drop = bad[ratio <= t + 1e-15]
            lam[drop] = 0.0
            free[drop] = False
            idx = np.where(free)[0]
            if idx.size == 0:
                break
            sol = np.zeros(m)
            sol[idx] = np.linalg.lstsq(gram[np.ix_(idx, idx)], c[idx], rcond=None)[0]
        if idx.size:
            lam = sol.copy()
            lam[~free] = 0.0
    return lam


def solve_nnls(
    gram: np.ndarray,
    c: np.ndarray,
    tol: float,
    max_iter: int = NNLS_MAX_ITER,
    lam0: np.ndarray | None = None,
    polish: bool = True,
):
    """Minimize lam' gram lam - 2 c'lam subject to lam >= 0.

    Projected gradient with a Barzilai-Borwein step and a nonmonotone
    acceptance window, then (optionally) active-set polishing to drive the
    projected gradient below tol. Deterministic: fixed starting point and
    iteration order. lam0 warm-starts the iteration.
    """
    m = c.shape[0]
    lam = np.zeros(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=np.float64), 0.0)
    grad = 2.0 * (gram @ lam - c)
    if np.linalg.norm(_projected_gradient(lam, grad)) <= tol:
        return lam
    trace_g = float(np.trace(gram))
    step = 1.0 / (2.0 * trace_g) if trace_g > 0 else 1.0
    f = lambda x: float(x @ (gram @ x) - 2.0 * (c @ x))  # noqa: E731
    f_cur = f(lam)
    hist = [f_cur]
    for _ in range(max_iter):
        trial = np.maximum(lam - step * grad, 0.0)
        d = trial - lam
        dnorm2 = float(d @ d)
        if dnorm2 == 0.0:
            break
        gd = float(grad @ d)
        t = 1.0
        fmax = max(hist[-10:])
        f_new = f(lam + d)
        while f_new > fmax + 1e-4 * t * gd and t > 1e-12:
            t *= 0.5
            f_new = f(lam + t * d)
        lam_new = np.maximum(lam + t * d, 0.0)
        grad_new = 2.0 * (gram @ lam_new - c)
        s = lam_new - lam
        ys = float(s @ (grad_new - grad))
        step = float(s @ s) / ys if ys > 1e-300 else step * 2.0
        step = min(max(step, 1e-12), 1e12)
        lam, grad, f_cur = lam_new, grad_new, f(lam_new)
        hist.append(f_cur)
        if np.linalg.norm(_projected_gradient(lam, grad)) <= tol:
            return lam
    if polish:
        return _nnls_active_set_polish(gram, c, lam, tol)
    return lam


def fit_multipliers(params: net.NetworkParams, dataset: LabeledDataset) -> Multipliers:
    """Nonnegative least-squares multipliers minimizing the stationarity residual.

    Solved to projected-gradient tolerance 1e-10 * (1 + ||theta||).
    """
    gram, c = gradient_gram(params, dataset.X, dataset.y)
    theta_norm = float(np.linalg.norm(net.flatten_params(params)))
    tol = NNLS_TOL_SCALE * (1.0 + theta_norm)
    return Multipliers(solve_nnls(gram, c, tol))


def margin_value(params: net.NetworkParams, dataset: LabeledDataset) -> float:
    """p = min_i y_i Phi(theta; x_i) at the deployed scale."""
    return float(np.min(dataset.y * net.forward_batch(params, dataset.X)))


def certify(
    params: net.NetworkParams,
    dataset: LabeledDataset,
    multipliers: Multipliers,
    p: float | None = None,
) -> KKTCertificate:
    """Measure (epsilon, delta) for the given multipliers and margin value p.

    When p is omitted it is measured from the network as min_i y_i Phi.
    delta is floored at 0: negative slack means the condition holds strictly.
    """
    if not multipliers.nonnegative:
        raise InvalidMultiplierError("certificates require lambda >= 0 entrywise")
    if len(multipliers) != dataset.n:
        raise ShapeError("multiplier count must match the dataset")
    margins = dataset.y * net.forward_batch(params, dataset.X)
    if p is None:
        p = float(np.min(margins))
    epsilon, _ = stationarity_residual(params, dataset.X, dataset.y, multipliers)
    slack = multipliers.values * (margins - p)
    delta = max(0.0, float(np.max(slack)))
    return KKTCertificate(
        multipliers=multipliers,
        epsilon=epsilon,
        p=float(p),
        delta=delta,
        satisfied_margin=bool(np.min(margins) >= p),
    )


# --- certificate file ---------------------------------------------------------

def save_certificate(
    cert: KKTCertificate, path, params: net.NetworkParams, dataset: LabeledDataset
) -> None:
    doc = {
        "lambda": cert.multipliers.values.tolist(),
        "epsilon": cert.epsilon,
        "delta": cert.delta,
        "p": cert.p,
        "satisfied_margin": cert.satisfied_margin,
        "model_hash": net.model_hash(params),
        "data_hash": data_hash(dataset),
    }
    with open(path, "w") as f:
        json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_certificate(
    path,
    params: net.NetworkParams | None = None,
    dataset: LabeledDataset | None = None,
) -> KKTCertificate:
    """Load a certificate; verifies embedded hashes when model/data are given."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise ValidationError(f"bad certificate file {path}: {e}") from e
    if params is not None and doc.get("model_hash") != net.model_hash(params):
        raise HashMismatchError(f"{path}: certificate was computed from a different model")
    if dataset is not None and doc.get("data_hash") != data_hash(dataset):
        raise HashMismatchError(f"{path}: certificate was computed from a different dataset")
    return KKTCertificate(
        multipliers=Multipliers(np.asarray(doc["lambda"], dtype=np.float64)),
        epsilon=float(doc["epsilon"]),
        p=float(doc["p"]),
        delta=float(doc["delta"]),
        satisfied_margin=bool(doc["satisfied_margin"]),
    )


def config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
