"""Prior-free reconstruction attack.

Jointly minimizes gamma1 * ||theta - sum_i lambda_i grad[y_i Phi(x_i)]||^2
+ gamma2 * sum_i max(-lambda_i, 0) over candidate points and multipliers by
gradient descent with backtracking. The squared residual is the optimization
surrogate; the reported loss uses the unsquared norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kkt, net
from .data import LabeledDataset
from .errors import AttackDivergedError, ShapeError, ValidationError
from .kkt import KKTLossWeights

CONVERGED_LOSS = 1e-15  # early exit below this times (1 + ||theta||)
LAMBDA_PG_STEPS = 4  # projected-gradient multiplier updates per candidate sweep


@dataclass(frozen=True)
class SphereInit:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError("sphere radius must be positive")


@dataclass(frozen=True)
class BoxInit:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError("box init needs lo < hi")


LABEL_ASSIGNMENTS = ("balanced", "all_positive", "all_negative")


@dataclass(frozen=True)
class AttackConfig:
    m: int
    init: SphereInit | BoxInit
    label_assignment: str = "balanced"
    weights: KKTLossWeights = KKTLossWeights()
    learning_rate: float = 0.05
    iterations: int = 2000
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        if self.label_assignment not in LABEL_ASSIGNMENTS:
            raise ValidationError(f"label_assignment must be one of {LABEL_ASSIGNMENTS}")
        if self.learning_rate <= 0 or self.iterations < 1 or self.restarts < 1:
            raise ValidationError("learning_rate, iterations, restarts must be positive")


@dataclass(frozen=True)
class ReconstructionResult:
    candidates: np.ndarray
    labels: np.ndarray
    multipliers: np.ndarray
    final_kkt_loss: float
    restart_losses: np.ndarray
    per_candidate_nn_distance: np.ndarray | None = None


def _residual_blocks(params, X, y, lam):
    """Residual r = theta - sum_i lambda_i g_i, split into (W, b, v) blocks."""
    r = net.flatten_params(params) - net.weighted_grad_sum(params, X, y, lam)
    return net.split_flat(r, params.hidden_width, params.input_dim)


def evaluate_losses(params, X, y, lam, weights: KKTLossWeights):
    """(unsquared reported loss, squared surrogate) at the given state."""
    loss, resid_norm, penalty = _state_eval(params, X, y, lam, weights)
    return loss, weights.gamma1 * resid_norm**2 + weights.gamma2 * penalty


def _state_eval(params, X, y, lam, weights: KKTLossWeights):
    Rw, rb, rv = _residual_blocks(params, X, y, lam)
    resid_norm = float(np.sqrt((Rw * Rw).sum() + rb @ rb + rv @ rv))
    penalty = float(np.maximum(-lam, 0.0).sum())
    return weights.gamma1 * resid_norm + weights.gamma2 * penalty, resid_norm, penalty


def attack_gradients(params: net.NetworkParams, candidates, labels, lam, weights: KKTLossWeights):
    """Closed-form gradients of the squared-residual objective.

    Returns (m x d gradients w.r.t. the candidates, length-m gradients
    w.r.t. the multipliers). The gradient of g_i w.r.t. x_i is constant
    within an activation pattern; the subgradient of max(-lambda, 0) at 0
    is taken as 0.
    """
    X = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if not (X.shape[0] == y.shape[0] == lam.shape[0]):
        raise ShapeError("candidates, labels, multipliers must have equal length")
    Rw, rb, rv = _residual_blocks(params, X, y, lam)
    pre = net.preactivations(params, X)
    mask = pre > 0.0
    relu = np.where(mask, pre, 0.0)
    v = params.v
    g1, g2 = weights.gamma1, weights.gamma2

    dots = y * (
        np.where(mask, X @ Rw.T, 0.0) @ v + mask @ (v * rb) + relu @ rv
    )
    lam_grad = -2.0 * g1 * dots + g2 * np.where(lam < 0.0, -1.0, 0.0)

    x_grad = -2.0 * g1 * (lam * y)[:, None] * (
        np.where(mask, v[None, :], 0.0) @ Rw + np.where(mask, rv[None, :], 0.0) @ params.W
    )
    return x_grad, lam_grad


def minimize_kkt_loss(
    params: net.NetworkParams,
    X0: np.ndarray,
    labels: np.ndarray,
    lam0: np.ndarray,
    weights: KKTLossWeights,
    learning_rate: float,
    iterations: int,
    loss_callback=None,
):
    """One descent run from the given state.

    Each iteration is (a) a few conservative projected-gradient steps on
    the multiplier block (step 1/L on its quadratic subproblem, projected
    to the nonnegative orthant), then (b) one Jacobi sweep over the
    candidates: every candidate backtracks independently along its own
    gradient against the frozen residual, largest improving step first,
    and the accepted moves are applied together under a halving damping
    guard with a single-best fallback. Independent line searches are what
    lets the sweep walk past the loss jumps at activation-pattern
    boundaries: one candidate pinned on a boundary cannot block the rest.
    Deliberately slow multipliers keep the candidate dynamics local, the
    regime in which the initialization prior governs what the attack
    finds. Returns (X, lam, reported loss); loss = inf if the state left
    the finite range.
    """
    X = np.array(X0, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    lam = np.array(lam0, dtype=np.float64)
    theta_scale = 1.0 + float(np.linalg.norm(net.flatten_params(params)))
    loss, resid_norm, penalty = _state_eval(params, X, y, lam, weights)
    if not np.isfinite(loss):
        return X, lam, np.inf
    ladder_depth = 24

    for it in range(iterations):
        if loss <= CONVERGED_LOSS * theta_scale:
            break
        # multiplier block: monotone 1/L projected-gradient steps
        gram, c = kkt.gradient_gram(params, X, y)
        lip = 2.0 * max(float(np.trace(gram)), 1e-300)
        for _ in range(LAMBDA_PG_STEPS):
            lam = np.maximum(lam - 2.0 * (gram @ lam - c) / lip, 0.0)
        loss, resid_norm, penalty = _state_eval(params, X, y, lam, weights)

        # candidate block
        x_grad, _ = attack_gradients(params, X, y, lam, weights)
        gnorm = np.linalg.norm(x_grad, axis=1)
        movable = gnorm > 0.0
        if not movable.any():
            break
        D = np.where(movable[:, None], x_grad / np.maximum(gnorm, 1e-300)[:, None], 0.0)
        r = net.flatten_params(params) - net.weighted_grad_sum(params, X, y, lam)
        base = _per_candidate_terms(params, X, y, r)
        pending = movable.copy()
        step = np.zeros(X.shape[0])
        cand_loss = np.full(X.shape[0], np.inf)
        t = learning_rate
        for _ in range(ladder_depth):
            if not pending.any():
                break
            Z = X - t * D
            dot_r, sq, cross = _per_candidate_terms(params, Z, y, r, X_ref=X)
            rr = (
                resid_norm**2
                - 2.0 * lam * (dot_r - base[0])
                + lam**2 * (sq - 2.0 * cross + base[1])
            )
            trial_loss = weights.gamma1 * np.sqrt(np.maximum(rr, 0.0)) + weights.gamma2 * penalty
            improved = pending & (trial_loss < loss)
            step[improved] = t
            cand_loss[improved] = trial_loss[improved]
            pending &= ~improved
            t *= 0.5
        if not (step > 0.0).any():
            break  # no candidate can improve alone: coordinate-wise stationary
        moved = False
        damp = 1.0
        for _ in range(12):
            trial = _state_eval(params, X - damp * step[:, None] * D, y, lam, weights)
            if trial[0] <= loss:
                X = X - damp * step[:, None] * D
                loss, resid_norm, penalty = trial
                moved = True
                break
            damp *= 0.5
        if not moved:
            # interactions spoiled the joint move; apply the single best step,
            # whose effect on the residual is exact
            i = int(np.argmin(cand_loss))
            X = X.copy()
            X[i] -= step[i] * D[i]
            loss, resid_norm, penalty = _state_eval(params, X, y, lam, weights)
        if loss_callback is not None:
            loss_callback(it, loss, X, lam)
    return X, lam, loss


def _per_candidate_terms(params, Z, y, r, X_ref=None):
    """<g_i(z_i), r>, ||g_i(z_i)||^2 and, when X_ref is given,
    <g_i(z_i), g_i(x_i)> for every candidate, in closed form."""
    k, d = params.hidden_width, params.input_dim
    Rw, rb, rv = net.split_flat(r, k, d)
    v = params.v
    pre = net.preactivations(params, Z)
    mask = pre > 0.0
    relu = np.where(mask, pre, 0.0)
    dot_r = y * (
        np.where(mask, Z @ Rw.T, 0.0) @ v + mask @ (v * rb) + relu @ rv
    )
    v2m = np.where(mask, v[None, :] ** 2, 0.0)
    sq = ((Z * Z).sum(axis=1) + 1.0) * v2m.sum(axis=1) + (relu * relu).sum(axis=1)
    if X_ref is None:
        return dot_r, sq
    pre_x = net.preactivations(params, X_ref)
    mask_x = pre_x > 0.0
    relu_x = np.where(mask_x, pre_x, 0.0)
    cross = ((Z * X_ref).sum(axis=1) + 1.0) * (v2m * mask_x).sum(axis=1) + (
        relu * relu_x
    ).sum(axis=1)
    return dot_r, sq, cross


def _init_state(params, config: AttackConfig, restart: int):
    d = params.input_dim
    pts = np.empty((config.m, d))
    for i in range(config.m):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed & 0xFFFFFFFF, restart, i])
        )
        if isinstance(config.init, SphereInit):
            g = rng.standard_normal(d)
            pts[i] = config.init.radius * g / np.linalg.norm(g)
        else:
            pts[i] = rng.uniform(config.init.lo, config.init.hi, size=d)
    lam = np.full(config.m, 1.0 / config.m)
    return pts, lam


def assign_labels(m: int, assignment: str) -> np.ndarray:
    if assignment == "all_positive":
        return np.ones(m)
    if assignment == "all_negative":
        return -np.ones(m)
    y = np.ones(m)
    y[m // 2 :] = -1.0
    return y


def reconstruct(
    params: net.NetworkParams,
    config: AttackConfig,
    true_set: LabeledDataset | None = None,
    init_state: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> ReconstructionResult:
    """Run `restarts` independent minimizations and keep the best.

    Each restart draws its own initialization from a per-(seed, restart,
    candidate) stream; `init_state` = (X0, labels, lam0) overrides the drawn
    state in every restart (used for planted fixed-point checks). When
    true_set is given, per-candidate nearest-neighbor distances are filled.
    """
    best = None
    losses = np.full(config.restarts, np.inf)
    for restart in range(config.restarts):
        if init_state is not None:
            X0, labels, lam0 = init_state
            labels = np.asarray(labels, dtype=np.float64)
        else:
            X0, lam0 = _init_state(params, config, restart)
            labels = assign_labels(config.m, config.label_assignment)
        X, lam, loss = minimize_kkt_loss(
            params, X0, labels, lam0, config.weights,
            config.learning_rate, config.iterations,
        )
        losses[restart] = loss
        if np.isfinite(loss) and (best is None or loss < best[3]):
            best = (X, labels, lam, loss)
    if best is None:
        raise AttackDivergedError("every restart diverged", losses)
    X, labels, lam, loss = best
    nn = None
    if true_set is not None:
        nn, _ = nn_metrics(X, true_set, top_k=min(5, config.m))
    return ReconstructionResult(
        candidates=X,
        labels=labels,
        multipliers=lam,
        final_kkt_loss=float(loss),
        restart_losses=losses,
        per_candidate_nn_distance=nn,
    )


def nn_metrics(candidates: np.ndarray, true_set: LabeledDataset, top_k: int):
    """Per-candidate min Euclidean distance to the true set, and the mean
    of the top_k smallest such distances. Plain O(m*n) scan."""
    X = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if true_set.n < 1:
        raise ValidationError("true set is empty")
    if not (1 <= top_k <= X.shape[0]):
        raise ValidationError(f"top_k must be in [1, {X.shape[0]}], got {top_k}")
    diff = X[:, None, :] - true_set.X[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    top = np.sort(dists)[:top_k]
    return dists, float(top.mean())
