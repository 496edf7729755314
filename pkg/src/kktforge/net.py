"""2-layer homogeneous ReLU classifier.

The network is Phi(theta; x) = sum_j v_j * relu(<w_j, x> + b_j) with
theta = (W, b, v). Scaling every parameter by s scales the output by s^2
(degree-2 homogeneity), which everything downstream relies on.

Parameter vectors use one fixed flat layout throughout the package:
all W rows in order, then b, then v (dimension k*d + k + k). Residuals
and gradients are exchanged in that layout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNeuronError, ShapeError, ValidationError

HOMOGENEITY_ORDER = 2


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NetworkParams:
    """Immutable parameters of a width-k, input-dim-d network."""

    W: np.ndarray  # k x d, row j = w_j
    b: np.ndarray  # k
    v: np.ndarray  # k

    def __post_init__(self):
        object.__setattr__(self, "W", _readonly(np.atleast_2d(self.W)))
        object.__setattr__(self, "b", _readonly(self.b))
        object.__setattr__(self, "v", _readonly(self.v))
        if self.W.ndim != 2:
            raise ShapeError(f"W must be 2-d, got {self.W.ndim}-d")
        k, d = self.W.shape
        if k < 1 or d < 1:
            raise ShapeError(f"need k >= 1 and d >= 1, got W of shape {self.W.shape}")
        if self.b.shape != (k,) or self.v.shape != (k,):
            raise ShapeError(
                f"b and v must have shape ({k},), got {self.b.shape} and {self.v.shape}"
            )
        for name in ("W", "b", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"non-finite entries in {name}")

    @property
    def hidden_width(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def homogeneity_order(self) -> int:
        return HOMOGENEITY_ORDER

    @property
    def num_params(self) -> int:
        k, d = self.W.shape
        return k * d + 2 * k

    def scaled(self, s: float) -> "NetworkParams":
        return NetworkParams(self.W * s, self.b * s, self.v * s)


@dataclass(frozen=True)
class ActivationPattern:
    """Per-neuron on/off bits for one input; strict inequality at zero."""

    bits: np.ndarray = field(compare=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())


def _check_input(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ShapeError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    return x


def preactivations(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """<w_j, x_i> + b_j for a batch X (n x d); returns n x k."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ShapeError(f"expected {params.input_dim} features, got {X.shape[1]}")
    return X @ params.W.T + params.b[None, :]


def forward(params: NetworkParams, x: np.ndarray) -> float:
    """Network output sum_j v_j * relu(<w_j, x> + b_j)."""
    x = _check_input(params, x)
    pre = params.W @ x + params.b
    return float(np.maximum(pre, 0.0) @ params.v)


def forward_batch(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    pre = preactivations(params, X)
    return np.maximum(pre, 0.0) @ params.v


def activation_pattern(params: NetworkParams, x: np.ndarray) -> ActivationPattern:
    """Pattern bits; a preactivation of exactly zero counts as inactive."""
    x = _check_input(params, x)
    return ActivationPattern(params.W @ x + params.b > 0.0)


def activation_masks(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Batch pattern bits as an n x k boolean matrix."""
    return preactivations(params, X) > 0.0


def signed_distance(params: NetworkParams, j: int, x: np.ndarray) -> float:
    """Signed distance from x to neuron j's hyperplane <w_j, x> + b_j = 0."""
    x = _check_input(params, x)
    w = params.W[j]
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise DegenerateNeuronError(f"neuron {j} has a zero weight row")
    return float((w @ x + params.b[j]) / norm)


# --- flat parameter-vector layout -------------------------------------------

def flatten_params(params: NetworkParams) -> np.ndarray:
    """Flat layout: W rows in order, then b, then v."""
    return np.concatenate([params.W.ravel(), params.b, params.v])


def unflatten_params(vec: np.ndarray, k: int, d: int) -> NetworkParams:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (k * d + 2 * k,):
        raise ShapeError(f"expected flat vector of length {k * d + 2 * k}, got {vec.shape}")
    return NetworkParams(vec[: k * d].reshape(k, d), vec[k * d : k * d + k], vec[k * d + k :])


def split_flat(vec: np.ndarray, k: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """View a flat vector as its (W, b, v) blocks without copying."""
    return vec[: k * d].reshape(k, d), vec[k * d : k * d + k], vec[k * d + k :]


def grad_theta(params: NetworkParams, x: np.ndarray, y: float) -> np.ndarray:
    """Gradient of y * Phi(theta; x) w.r.t. theta, in flat layout.

    Per neuron j: the w_j block is y*v_j*s_j*x, the b_j entry y*v_j*s_j and
    the v_j entry y*relu(<w_j,x>+b_j), where s_j is the pattern bit. The
    subgradient at a zero preactivation is taken as 0.
    """
    x = _check_input(params, x)
    if y not in (-1.0, 1.0, -1, 1):
        raise ValidationError(f"label must be -1 or +1, got {y!r}")
    pre = params.W @ x + params.b
    s = (pre > 0.0).astype(np.float64)
    gW = (y * params.v * s)[:, None] * x[None, :]
    gb = y * params.v * s
    gv = y * s * pre
    return np.concatenate([gW.ravel(), gb, gv])


def weighted_grad_sum(
    params: NetworkParams, X: np.ndarray, y: np.ndarray, coef: np.ndarray
) -> np.ndarray:
    """sum_i coef_i * grad_theta(params, x_i, y_i) in flat layout.

    Vectorized kernel shared by the trainer, the certifier, and the attack;
    O(n*k*d) with no per-point gradient materialization.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    if not (X.shape[0] == y.shape[0] == coef.shape[0]):
        raise ShapeError("points, labels, and coefficients must have equal length")
    pre = preactivations(params, X)
    mask = pre > 0.0
    s = coef * y
    ms = np.where(mask, s[:, None], 0.0)  # n x k
    gW = params.v[:, None] * (ms.T @ X)
    gb = params.v * ms.sum(axis=0)
    gv = np.where(mask, pre, 0.0).T @ s
    return np.concatenate([gW.ravel(), gb, gv])


def shift_bias_defense(params: NetworkParams, u: np.ndarray) -> NetworkParams:
    """Replace each b_j by b_j - <w_j, u>; W and v are untouched.

    The returned network on shifted inputs reproduces the original:
    forward(shifted, x + u) == forward(params, x).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (params.input_dim,):
        raise ShapeError(f"expected shift of shape ({params.input_dim},), got {u.shape}")
    return NetworkParams(params.W, params.b - params.W @ u, params.v)


# --- model file --------------------------------------------------------------

def model_hash(params: NetworkParams) -> str:
    h = hashlib.sha256()
    k, d = params.W.shape
    h.update(f"net:{k}:{d}:".encode())
    h.update(params.W.astype("<f8").tobytes())
    h.update(params.b.astype("<f8").tobytes())
    h.update(params.v.astype("<f8").tobytes())
    return h.hexdigest()


def save_model(params: NetworkParams, path, meta: dict | None = None) -> None:
    doc = {
        "d": params.input_dim,
        "k": params.hidden_width,
        "W": params.W.tolist(),
        "b": params.b.tolist(),
        "v": params.v.tolist(),
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_model(path) -> NetworkParams:
    with open(path) as f:
        try:
            doc = json.load(f, parse_constant=_reject_constant)
        except ValueError as e:
            raise ValidationError(f"bad model file {path}: {e}") from e
    try:
        W = np.asarray(doc["W"], dtype=np.float64)
        b = np.asarray(doc["b"], dtype=np.float64)
        v = np.asarray(doc["v"], dtype=np.float64)
        k, d = int(doc["k"]), int(doc["d"])
    except (KeyError, TypeError) as e:
        raise ValidationError(f"bad model file {path}: {e}") from e
    if W.shape != (k, d):
        raise ValidationError(f"model file {path}: W shape {W.shape} != ({k}, {d})")
    return NetworkParams(W, b, v)


def _reject_constant(name):
    raise ValidationError(f"non-finite constant {name!r} in model file")
