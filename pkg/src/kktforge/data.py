"""Labeled datasets: generation, CSV persistence, hashing.

CSV layout is plain decimal text with header ``f0..f{d-1},label`` and an
optional trailing ``lambda`` column for weighted sets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError


def _readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LabeledDataset:
    """n points in R^d with labels in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", _readonly(np.atleast_2d(self.X)))
        object.__setattr__(self, "y", _readonly(self.y))
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ShapeError(f"X must be a nonempty 2-d array, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ShapeError(f"y must have shape ({self.X.shape[0]},), got {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("non-finite entries in X")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValidationError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def shifted(self, u: np.ndarray) -> "LabeledDataset":
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.d,):
            raise ShapeError(f"expected shift of shape ({self.d},), got {u.shape}")
        return LabeledDataset(self.X + u[None, :], self.y)


def gen_sphere_dataset(n: int, d: int, seed: int) -> LabeledDataset:
    """Uniform points on the unit sphere labeled by the sign of x_1.

    Exactly n/2 points per class, enforced by stratified resampling; points
    with |x_1| < 1e-9 are redrawn so every label is unambiguous.
    """
    if n % 2 != 0:
        raise ValidationError(f"n must be even, got {n}")
    if d < 2:
        raise ValidationError(f"d must be >= 2, got {d}")
    rng = np.random.default_rng(seed)
    half = n // 2
    pos, neg = [], []
    while len(pos) < half or len(neg) < half:
        g = rng.standard_normal((n, d))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
        pts = pts[np.abs(pts[:, 0]) >= 1e-9]
        for x in pts:
            if x[0] > 0 and len(pos) < half:
                pos.append(x)
            elif x[0] < 0 and len(neg) < half:
                neg.append(x)
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(half), -np.ones(half)])
    return LabeledDataset(X, y)


def data_hash(dataset: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(f"data:{dataset.n}:{dataset.d}:".encode())
    h.update(dataset.X.astype("<f8").tobytes())
    h.update(dataset.y.astype("<f8").tobytes())
    return h.hexdigest()


def save_dataset(dataset: LabeledDataset, path, multipliers: np.ndarray | None = None) -> None:
    cols = [f"f{i}" for i in range(dataset.d)] + ["label"]
    if multipliers is not None:
        multipliers = np.asarray(multipliers, dtype=np.float64)
        if multipliers.shape != (dataset.n,):
            raise ShapeError("multiplier column length must match the dataset")
        cols.append("lambda")
    lines = [",".join(cols)]
    for i in range(dataset.n):
        row = [repr(float(x)) for x in dataset.X[i]]
        row.append(repr(float(dataset.y[i])))
        if multipliers is not None:
            row.append(repr(float(multipliers[i])))
        lines.append(",".join(row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path, with_multipliers: bool = False):
    """Load a dataset CSV; returns LabeledDataset, or (LabeledDataset, lambda)."""
    with open(path) as f:
        header = f.readline().strip()
        body = f.read()
    cols = header.split(",") if header else []
    has_lambda = bool(cols) and cols[-1] == "lambda"
    if with_multipliers and not has_lambda:
        raise ValidationError(f"{path}: expected a lambda column, header is {header!r}")
    expected = [f"f{i}" for i in range(len(cols) - 1 - int(has_lambda))] + ["label"]
    if cols[: len(expected)] != expected:
        raise ValidationError(f"{path}: unexpected header {header!r}")
    try:
        raw = np.array(
            [[float(tok) for tok in line.split(",")] for line in body.splitlines() if line],
            dtype=np.float64,
        )
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e
    if raw.size == 0:
        raise ValidationError(f"{path}: no data rows")
    if raw.shape[1] != len(cols):
        raise ValidationError(f"{path}: row width {raw.shape[1]} != header width {len(cols)}")
    if not np.all(np.isfinite(raw)):
        raise ValidationError(f"{path}: non-finite values")
    lam = raw[:, -1] if has_lambda else None
    feats = raw[:, : -1 - int(has_lambda)]
    labels = raw[:, -1 - int(has_lambda)]
    ds = LabeledDataset(feats, labels)
    if with_multipliers:
        return ds, lam
    return ds
