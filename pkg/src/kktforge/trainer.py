"""Full-batch gradient descent to a near-KKT classifier.

Plain GD is the discrete stand-in for gradient flow. The optional
loss-normalized schedule divides the step by the current loss once the loss
has dropped below 1/n, which is what makes exponential-tail losses reach
large-margin directions in a workable number of epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kkt, net
from .data import LabeledDataset
from .errors import DegenerateParamsError, TrainingDivergedError, ValidationError

LOSS_KINDS = ("logistic", "exponential")
LR_SCHEDULES = ("constant", "loss_normalized")


@dataclass(frozen=True)
class TrainConfig:
    width: int
    loss_kind: str = "logistic"
    learning_rate: float = 0.05
    max_epochs: int = 50_000
    target_loss: float = 1e-7
    seed: int = 0
    init_scale: float | None = None  # default 1/sqrt(d)
    lr_schedule: str = "loss_normalized"

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValidationError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.target_loss <= 0:
            raise ValidationError("target_loss must be positive")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")
        if self.width < 1:
            raise ValidationError("width must be >= 1")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValidationError("init_scale must be positive")


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    loss: float
    normalized_margin: float
    residual: float  # stationarity residual of the fitted lambda, relative to ||theta||
    theta_norm: float
    below_1_over_n: bool


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def reached_below_1_over_n(self) -> bool:
        return any(r.below_1_over_n for r in self.records)

    def to_csv(self, path) -> None:
        lines = ["epoch,loss,normalized_margin,residual,theta_norm,below_1_over_n"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.loss!r},{r.normalized_margin!r},{r.residual!r},"
                f"{r.theta_norm!r},{int(r.below_1_over_n)}"
            )
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def _loss_values(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "logistic":
        return np.logaddexp(0.0, -z)
    return np.exp(-z)


def _loss_derivative(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "logistic":
        # -sigmoid(-z), written to avoid overflow on both tails
        out = np.empty_like(z)
        pos = z >= 0
        ez = np.exp(-z[pos])
        out[pos] = -ez / (1.0 + ez)
        ez = np.exp(z[~pos])
        out[~pos] = -1.0 / (1.0 + ez)
        return out
    return -np.exp(-z)


def empirical_loss(params: net.NetworkParams, dataset: LabeledDataset, loss_kind: str) -> float:
    """Mean of loss(y_i * Phi(theta; x_i)) over the dataset."""
    if loss_kind not in LOSS_KINDS:
        raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}")
    z = dataset.y * net.forward_batch(params, dataset.X)
    return float(np.mean(_loss_values(z, loss_kind)))


def normalized_margin(params: net.NetworkParams, dataset: LabeledDataset) -> float:
    """min_i y_i Phi / ||theta||^2; invariant under parameter scaling."""
    theta_norm = float(np.linalg.norm(net.flatten_params(params)))
    if theta_norm == 0.0:
        raise DegenerateParamsError("normalized margin of the zero network is undefined")
    return kkt.margin_value(params, dataset) / theta_norm**2


def init_params(d: int, config: TrainConfig) -> net.NetworkParams:
    """Entries i.i.d. uniform in [-s, s] with s defaulting to 1/sqrt(d)."""
    scale = config.init_scale if config.init_scale is not None else 1.0 / np.sqrt(d)
    rng = np.random.default_rng(config.seed)
    k = config.width
    W = rng.uniform(-scale, scale, size=(k, d))
    b = rng.uniform(-scale, scale, size=k)
    v = rng.uniform(-scale, scale, size=k)
    return net.NetworkParams(W, b, v)


def _log_epochs(max_epochs: int) -> set[int]:
    out = {0}
    e = 1
    while e <= max_epochs:
        out.add(e)
        e *= 2
    return out


def _fitted_relative_residual(params: net.NetworkParams, dataset: LabeledDataset) -> float:
    lam = kkt.fit_multipliers(params, dataset)
    eps, _ = kkt.stationarity_residual(params, dataset.X, dataset.y, lam)
    theta_norm = float(np.linalg.norm(net.flatten_params(params)))
    return eps / theta_norm if theta_norm > 0 else eps


MAX_HALVINGS_PER_EPOCH = 30


def train_to_kkt(dataset: LabeledDataset, config: TrainConfig):
    """Run full-batch GD; returns (params, trace).

    Stops at max_epochs or once the empirical loss reaches target_loss. A
    step that would increase the loss is retried at half the rate (the
    working rate persists and recovers by 1.25x after accepted steps); a
    homogeneous network's curvature grows with its norm, and a fixed rate
    otherwise destabilizes before the loss reaches the 1/n regime on
    higher-dimensional data. After 30 halvings the step is taken as-is, so
    a genuinely divergent configuration still leaves the finite range and
    raises. The trace is logged on a geometric epoch grid (0, 1, 2, 4,
    ...) plus the final epoch, and flags whether the loss has dropped
    below 1/n yet.
    """
    X, y = dataset.X, dataset.y
    n, d = dataset.n, dataset.d
    params = init_params(d, config)
    W = params.W.copy()
    b = params.b.copy()
    v = params.v.copy()

    log_at = _log_epochs(config.max_epochs)
    trace = TrainTrace()
    threshold = 1.0 / n

    def record(epoch: int, loss: float, p: net.NetworkParams):
        trace.records.append(
            TraceRecord(
                epoch=epoch,
                loss=loss,
                normalized_margin=normalized_margin(p, dataset),
                residual=_fitted_relative_residual(p, dataset),
                theta_norm=float(np.linalg.norm(net.flatten_params(p))),
                below_1_over_n=loss < threshold,
            )
        )

    def forward_state(Wt, bt, vt):
        pre = X @ Wt.T + bt[None, :]
        z = y * (np.maximum(pre, 0.0) @ vt)
        return pre, z, float(np.mean(_loss_values(z, config.loss_kind)))

    base = config.learning_rate
    epoch = 0
    logged_epoch = -1
    pre, z, loss = forward_state(W, b, v)
    while True:
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch}", trace
            )
        if epoch in log_at:
            record(epoch, loss, net.NetworkParams(W, b, v))
            logged_epoch = epoch
        if loss <= config.target_loss or epoch >= config.max_epochs:
            break

        mask = pre > 0.0
        relu = np.where(mask, pre, 0.0)
        coef = _loss_derivative(z, config.loss_kind) * y / n  # n
        ms = np.where(mask, coef[:, None], 0.0)  # n x k
        gW = v[:, None] * (ms.T @ X)
        gb = v * ms.sum(axis=0)
        gv = relu.T @ coef

        for _ in range(MAX_HALVINGS_PER_EPOCH):
            lr = base / loss if (config.lr_schedule == "loss_normalized"
                                 and loss < threshold) else base
            trial = forward_state(W - lr * gW, b - lr * gb, v - lr * gv)
            # relative slack: near tiny initializations the true decrease per
            # step sits below float resolution and must not trigger halving
            if trial[2] <= loss * (1.0 + 1e-12):
                break
            base *= 0.5
        W -= lr * gW
        b -= lr * gb
        v -= lr * gv
        pre, z, loss = trial
        base = min(base * 1.25, config.learning_rate)
        epoch += 1

    final = net.NetworkParams(W, b, v)
    if logged_epoch != epoch:
        record(epoch, loss, final)
    return final, trace
