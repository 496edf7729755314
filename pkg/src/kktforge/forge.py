"""Constructions of alternative KKT sets.

Merging two points or splitting one point preserves the weighted gradient
sum sum_i lambda_i grad[y_i Phi] exactly, so the stationarity residual of
the modified set equals that of the original. The budget functions bound
how far a point can be split along a direction before an activation
pattern flips, and the brute-force boundary oracle validates every budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kkt, net
from .data import LabeledDataset
from .errors import (
    BudgetUnboundedError,
    DegeneratePositionError,
    MergeLabelError,
    MergeMultiplierError,
    MergePatternError,
    ShapeError,
    SplitClassificationError,
    SplitPatternError,
    SubspaceAssumptionError,
    ValidationError,
)

BUDGET_CAP = 1e12  # values above this serialize as the sentinel "unbounded"


def _readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class WeightedSet:
    """Candidate points with labels and nonnegative multipliers."""

    points: np.ndarray
    labels: np.ndarray
    multipliers: kkt.Multipliers

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(np.atleast_2d(self.points)))
        object.__setattr__(self, "labels", _readonly(self.labels))
        m = self.points.shape[0]
        if self.labels.shape != (m,):
            raise ShapeError("labels length must match the number of points")
        if len(self.multipliers) != m:
            raise ShapeError("multiplier count must match the number of points")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValidationError("labels must be -1 or +1")
        if not self.multipliers.nonnegative:
            raise ValidationError("weighted sets require lambda >= 0")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def dataset(self) -> LabeledDataset:
        return LabeledDataset(self.points, self.labels)

    @property
    def lam(self) -> np.ndarray:
        return self.multipliers.values

    def residual(self, params: net.NetworkParams):
        return kkt.stationarity_residual(params, self.points, self.labels, self.multipliers)

    def support(self, threshold: float = 0.0) -> "WeightedSet":
        """Subset with lambda > threshold; same residual as the full set."""
        keep = self.lam > threshold
        if not keep.any():
            raise ValidationError("no point carries a positive multiplier")
        return WeightedSet(self.points[keep], self.labels[keep],
                           kkt.Multipliers(self.lam[keep]))


@dataclass(frozen=True)
class SplitPlan:
    """Split point `index` into x + alpha*nu and x - beta*nu.

    gamma is the direction bound: |<nu, x_i>| <= gamma over the whole set.
    """

    index: int
    nu: np.ndarray
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "nu", _readonly(self.nu))
        if abs(float(np.linalg.norm(self.nu)) - 1.0) > 1e-12:
            raise ValidationError("nu must be a unit vector (within 1e-12)")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be nonnegative")
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")


@dataclass(frozen=True)
class BudgetReport:
    """Certified splitting budgets for one (set, point, direction) triple.

    exact_budget ignores the stationarity residual; approx_budget accounts
    for a measured residual epsilon; oracle_budget is the true distance to
    the nearest pattern boundary along +/-nu. per_neuron_terms are the
    quantities minimized by the approx formula.
    """

    exact_budget: float
    exact_budget_v_corrected: float
    approx_budget: float
    oracle_budget: float
    safe_budget: float
    per_neuron_terms: np.ndarray


# --- merge / split -----------------------------------------------------------

def merge(wset: WeightedSet, i1: int, i2: int, params: net.NetworkParams) -> WeightedSet:
    """Replace points i1, i2 by their multiplier-weighted blend.

    Requires equal labels, strictly positive multipliers, and identical
    activation patterns (shared by the blend). The merged point lands at
    min(i1, i2); the weighted gradient sum is preserved.
    """
    if i1 == i2:
        raise ValidationError("merge needs two distinct indices")
    lam = wset.lam
    if lam[i1] <= 0.0 or lam[i2] <= 0.0:
        raise MergeMultiplierError("merge requires lambda > 0 at both points")
    if wset.labels[i1] != wset.labels[i2]:
        raise MergeLabelError(f"labels differ at indices {i1} and {i2}")
    pat1 = net.activation_pattern(params, wset.points[i1])
    pat2 = net.activation_pattern(params, wset.points[i2])
    if pat1 != pat2:
        raise MergePatternError(f"activation patterns differ at indices {i1} and {i2}")
    alpha = lam[i1] / (lam[i1] + lam[i2])
    merged = alpha * wset.points[i1] + (1.0 - alpha) * wset.points[i2]
    if net.activation_pattern(params, merged) != pat1:
        raise MergePatternError("blended point does not share the common pattern")
    lo, hi = min(i1, i2), max(i1, i2)
    points = np.delete(wset.points, hi, axis=0)
    labels = np.delete(wset.labels, hi)
    new_lam = np.delete(lam, hi)
    points[lo] = merged
    new_lam[lo] = lam[i1] + lam[i2]
    return WeightedSet(points, labels, kkt.Multipliers(new_lam))


def split(wset: WeightedSet, plan: SplitPlan, params: net.NetworkParams) -> WeightedSet:
    """Replace point l by z1 = x + alpha*nu and z2 = x - beta*nu.

    z1 carries beta*lambda/(alpha+beta) and z2 carries alpha*lambda/(alpha+beta)
    (cross-assigned so the weighted sum of the children equals lambda * x).
    Both children must keep the parent's activation pattern and
    classification sign. z1 replaces the parent in place; z2 is appended.
    """
    l = plan.index
    if not (0 <= l < wset.size):
        raise ValidationError(f"index {l} out of range for set of size {wset.size}")
    if plan.alpha <= 0 or plan.beta <= 0:
        raise ValidationError("split requires strictly positive alpha and beta")
    lam_l = wset.lam[l]
    if lam_l <= 0.0:
        raise ValidationError("split requires lambda > 0 at the chosen point")
    x = wset.points[l]
    z1 = x + plan.alpha * plan.nu
    z2 = x - plan.beta * plan.nu
    parent_bits = net.activation_pattern(params, x).bits
    for z, tag in ((z1, "z1"), (z2, "z2")):
        bits = net.activation_pattern(params, z).bits
        if not np.array_equal(bits, parent_bits):
            neuron = int(np.flatnonzero(bits != parent_bits)[0])
            raise SplitPatternError(
                f"{tag} leaves the parent's activation pattern at neuron {neuron}", neuron
            )
        if np.sign(net.forward(params, z)) != np.sign(net.forward(params, x)):
            raise SplitClassificationError(f"{tag} flips the classification sign")
    denom = plan.alpha + plan.beta
    lam1 = plan.beta * lam_l / denom
    lam2 = plan.alpha * lam_l / denom
    points = np.vstack([wset.points, z2[None, :]])
    points[l] = z1
    labels = np.concatenate([wset.labels, [wset.labels[l]]])
    new_lam = np.concatenate([wset.lam, [lam2]])
    new_lam[l] = lam1
    return WeightedSet(points, labels, kkt.Multipliers(new_lam))


# --- boundary oracle and budgets ----------------------------------------------

def pattern_boundary_oracle(
    params: net.NetworkParams, x: np.ndarray, nu: np.ndarray
) -> tuple[float, float]:
    """Exact distances to the nearest pattern flip along +nu and -nu.

    Returns (t_plus, t_minus): x + t*nu keeps x's pattern for t in
    [0, t_plus), and x - t*nu for t in [0, t_minus); math.inf where no
    neuron constrains the ray.
    """
    x = np.asarray(x, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if abs(float(np.linalg.norm(nu)) - 1.0) > 1e-9:
        raise ValidationError("nu must be a unit vector")
    pre = params.W @ x + params.b
    if np.any(pre == 0.0):
        raise DegeneratePositionError(
            f"point lies exactly on neuron {int(np.flatnonzero(pre == 0.0)[0])}"
        )
    slope = params.W @ nu
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = -pre / slope
    t_plus = _min_positive(roots[slope != 0.0])
    t_minus = _min_positive(-roots[slope != 0.0])
    return t_plus, t_minus


def _min_positive(vals: np.ndarray) -> float:
    pos = vals[vals > 0.0]
    return float(pos.min()) if pos.size else math.inf


def split_budget_exact(
    params: net.NetworkParams, wset: WeightedSet, l: int, gamma: float,
    v_corrected: bool = False,
) -> float:
    """Splitting budget assuming exact stationarity.

    min_j |D_j(x_l)| * ||w_j|| / (gamma * sum_i lambda_i); with v_corrected
    the denominator carries a |v_j| factor per neuron. Note that
    |D_j| * ||w_j|| is just the absolute preactivation.
    """
    if gamma <= 0:
        raise BudgetUnboundedError(
            "gamma <= 0: the budget is unbounded; use the orthogonal construction"
        )
    pre = params.W @ wset.points[l] + params.b
    lam_sum = float(wset.lam.sum())
    if lam_sum <= 0:
        return math.inf
    denom = gamma * lam_sum
    if v_corrected:
        denom = denom * np.abs(params.v)
    with np.errstate(divide="ignore"):
        terms = np.abs(pre) / denom
    return float(np.min(terms))


def split_budget_approx(
    params: net.NetworkParams, wset: WeightedSet, l: int, gamma: float, eps: float
) -> float:
    """Splitting budget for a measured stationarity residual eps:
    min_j |D_j(x_l)| * ||w_j|| / (eps + gamma * |v_j| * sum_i lambda_i)."""
    if gamma < 0 or eps < 0:
        raise ValidationError("gamma and eps must be nonnegative")
    return float(np.min(_approx_terms(params, wset, l, gamma, eps)))


def _approx_terms(params, wset, l, gamma, eps):
    pre = params.W @ wset.points[l] + params.b
    denom = eps + gamma * np.abs(params.v) * float(wset.lam.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.abs(pre) / denom
    return np.where(denom > 0.0, terms, math.inf)


def delta_degradation(
    params: net.NetworkParams, wset: WeightedSet, plan: SplitPlan, eps: float
) -> tuple[float, bool]:
    """Worst-case growth of the complementary slack caused by a split.

    delta_increase = lambda_l * (alpha + beta) * sum_j |v_j| * (eps +
    gamma * |v_j| * sum_i lambda_i), summed over all k neurons. The split is
    admissible when the increase stays below the margin value p.
    """
    lam_l = float(wset.lam[plan.index])
    lam_sum = float(wset.lam.sum())
    per_neuron = np.abs(params.v) * (eps + plan.gamma * np.abs(params.v) * lam_sum)
    dd = lam_l * (plan.alpha + plan.beta) * float(per_neuron.sum())
    p = kkt.margin_value(params, wset.dataset)
    return dd, bool(dd < p)


def measured_gamma(wset: WeightedSet, nu: np.ndarray) -> float:
    """max_i |<nu, x_i>| over the set."""
    return float(np.max(np.abs(wset.points @ np.asarray(nu, dtype=np.float64))))


def budget_report(
    params: net.NetworkParams, wset: WeightedSet, l: int, nu: np.ndarray, eps: float
) -> BudgetReport:
    """All budget variants for splitting point l along nu, cross-checked
    against the boundary oracle; the safe budget is the conservative
    minimum of the guaranteed formulas."""
    gamma = measured_gamma(wset, nu)
    try:
        exact = split_budget_exact(params, wset, l, gamma)
        exact_v = split_budget_exact(params, wset, l, gamma, v_corrected=True)
    except BudgetUnboundedError:
        exact = math.inf
        exact_v = math.inf
    approx = split_budget_approx(params, wset, l, gamma, eps)
    t_plus, t_minus = pattern_boundary_oracle(params, wset.points[l], nu)
    return BudgetReport(
        exact_budget=exact,
        exact_budget_v_corrected=exact_v,
        approx_budget=approx,
        oracle_budget=min(t_plus, t_minus),
        safe_budget=min(exact_v, approx),
        per_neuron_terms=_approx_terms(params, wset, l, gamma, eps),
    )


# --- low-rank directions and distant sets --------------------------------------

def orthogonal_direction(wset: WeightedSet) -> np.ndarray | None:
    """A unit vector orthogonal to every point, or None for full-rank data.

    Rank deficiency is decided at singular-value threshold 1e-10 * sigma_1,
    and the returned direction is required to satisfy
    max_i |<nu, x_i>| <= 1e-10 * max_i ||x_i||.
    """
    X = wset.points
    _, s, Vh = np.linalg.svd(X, full_matrices=True)
    if X.shape[0] >= X.shape[1] and (s.size == 0 or s[-1] > 1e-10 * s[0]):
        return None
    nu = Vh[-1]
    max_norm = float(np.max(np.linalg.norm(X, axis=1)))
    if float(np.max(np.abs(X @ nu))) > 1e-10 * max_norm:
        return None
    return nu / float(np.linalg.norm(nu))


def svd_direction(wset: WeightedSet) -> tuple[np.ndarray, float]:
    """The thinnest direction of the data cloud.

    Returns the left-singular vector of the column data matrix for the
    smallest singular value sigma_d, guaranteeing |<x_i, nu>| <= sigma_d
    for every point (sigma_d = 0 when the points span a proper subspace).
    """
    S = wset.points.T  # d x n column matrix
    d, n = S.shape
    U, s, _ = np.linalg.svd(S, full_matrices=True)
    sigma_d = float(s[d - 1]) if n >= d else 0.0
    return U[:, -1].copy(), sigma_d


def project_weights_to_span(
    params: net.NetworkParams, X: np.ndarray, rcond: float = 1e-10
) -> net.NetworkParams:
    """Drop the component of every weight row orthogonal to span(X rows).

    Gradient-descent updates to the first layer always lie in the span of
    the training points, so the orthogonal component of W is untouched
    initialization; an exact stationary point carries none. Removing it
    leaves predictions, patterns, and per-point gradients on the data
    unchanged (the data has no mass off the span), never increases the
    stationarity residual, and is what makes wide orthogonal splits
    possible on trained networks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _, s, Vh = np.linalg.svd(X, full_matrices=False)
    rank = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
    B = Vh[:rank]
    return net.NetworkParams((params.W @ B.T) @ B, params.b, params.v)


def construct_distant_kkt_set(
    params: net.NetworkParams, wset: WeightedSet, r: float
) -> WeightedSet:
    """Split every point by +/-alpha along a direction orthogonal to all data.

    alpha = r * 1.001 (floored at 1e-6 so r = 0 still yields a valid split),
    so each new point sits at distance > r from every original point while
    the weighted gradient sum, and hence the stationarity residual, is
    unchanged. Requires the data to span a proper subspace.
    """
    if r < 0:
        raise ValidationError("r must be nonnegative")
    if np.any(wset.lam <= 0.0):
        raise ValidationError("distant-set construction requires lambda > 0 everywhere")
    nu = orthogonal_direction(wset)
    if nu is None:
        raise SubspaceAssumptionError(
            "no direction orthogonal to the data: the set spans the full space"
        )
    alpha = max(r * (1.0 + 1e-3), 1e-6)
    gamma = measured_gamma(wset, nu)  # bound over the original data, ~0 by construction
    current = wset
    # each split rewrites index l and appends one child, so original point
    # indices stay at 0..n-1 while processing
    n = wset.size
    for l in range(n):
        plan = SplitPlan(index=l, nu=nu, alpha=alpha, beta=alpha, gamma=gamma)
        current = split(current, plan, params)
    return current


# --- budget report file ---------------------------------------------------------

def _encode_budget(x: float):
    return "unbounded" if (not math.isfinite(x) or x > BUDGET_CAP) else x


def _decode_budget(x):
    return math.inf if x == "unbounded" else float(x)


def save_budget_report(report: BudgetReport, path) -> None:
    doc = {
        "exact_budget": _encode_budget(report.exact_budget),
        "exact_budget_v_corrected": _encode_budget(report.exact_budget_v_corrected),
        "approx_budget": _encode_budget(report.approx_budget),
        "oracle_budget": _encode_budget(report.oracle_budget),
        "safe_budget": _encode_budget(report.safe_budget),
        "per_neuron_terms": [_encode_budget(float(t)) for t in report.per_neuron_terms],
    }
    with open(path, "w") as f:
        json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_budget_report(path) -> BudgetReport:
    with open(path) as f:
        doc = json.load(f)
    return BudgetReport(
        exact_budget=_decode_budget(doc["exact_budget"]),
        exact_budget_v_corrected=_decode_budget(doc["exact_budget_v_corrected"]),
        approx_budget=_decode_budget(doc["approx_budget"]),
        oracle_budget=_decode_budget(doc["oracle_budget"]),
        safe_budget=_decode_budget(doc["safe_budget"]),
        per_neuron_terms=np.array([_decode_budget(t) for t in doc["per_neuron_terms"]]),
    )
