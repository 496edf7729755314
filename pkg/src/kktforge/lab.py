"""Experiment orchestration and reporting.

Runs the radius sweep (attacker prior = initialization radius) and the
bias-shift defense evaluation, and emits reports as CSV plus a hand-rolled
SVG scatter/line plot. Both emitters are byte-deterministic for identical
reports; no plotting library in the loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import attack, kkt, net, trainer
from ._version import __version__
from .data import LabeledDataset, data_hash
from .errors import DefenseTransformError, HashMismatchError, ValidationError


@dataclass(frozen=True)
class ReportRow:
    condition: float
    topk_mean_nn_distance: float
    final_kkt_loss: float
    epsilon: float
    delta: float
    p: float

    def __post_init__(self):
        for name in ("condition", "topk_mean_nn_distance", "final_kkt_loss",
                     "epsilon", "delta", "p"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"report field {name} is not finite")


@dataclass
class ExperimentReport:
    config: dict
    rows: list[ReportRow]
    environment: dict
    model_hash: str
    data_hash: str

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.condition)


def _environment_stamp(seed: int) -> dict:
    return {"seed": int(seed), "version": __version__}


def _attack_row(params, dataset, cert, config, condition, top_k):
    result = attack.reconstruct(params, config, true_set=dataset)
    k = min(top_k, config.m)
    _, topk_mean = attack.nn_metrics(result.candidates, dataset, top_k=k)
    return ReportRow(
        condition=float(condition),
        topk_mean_nn_distance=topk_mean,
        final_kkt_loss=result.final_kkt_loss,
        epsilon=cert.epsilon,
        delta=cert.delta,
        p=cert.p,
    )


def run_radius_sweep(
    dataset: LabeledDataset,
    train_config: trainer.TrainConfig,
    attack_config_base: attack.AttackConfig,
    radii: list[float],
    top_k: int = 5,
) -> ExperimentReport:
    """Train once, certify, then attack once per initialization radius.

    Every radius reuses the same attack seed, so duplicated radii produce
    identical rows and the whole sweep is a pure function of the seeds.
    """
    if not radii:
        raise ValidationError("radii must be nonempty")
    params, _ = trainer.train_to_kkt(dataset, train_config)
    lam = kkt.fit_multipliers(params, dataset)
    cert = kkt.certify(params, dataset, lam)
    rows = [
        _attack_row(
            params, dataset, cert,
            replace(attack_config_base, init=attack.SphereInit(float(r))),
            r, top_k,
        )
        for r in radii
    ]
    config_echo = {
        "experiment": "radius_sweep",
        "radii": [float(r) for r in radii],
        "top_k": int(top_k),
        "train": _train_config_doc(train_config),
        "attack": _attack_config_doc(attack_config_base),
    }
    return ExperimentReport(
        config=config_echo,
        rows=rows,
        environment=_environment_stamp(attack_config_base.seed),
        model_hash=net.model_hash(params),
        data_hash=data_hash(dataset),
    )


def run_defense_eval(
    dataset: LabeledDataset,
    u: np.ndarray,
    train_config: trainer.TrainConfig,
    attack_config: attack.AttackConfig,
    top_k: int = 5,
    probes: int = 1000,
) -> ExperimentReport:
    """Attack the trained network and its bias-shifted variant.

    Both attacks use the same (unshifted) initialization prior. The row at
    condition 0 measures reconstruction distance to the original training
    set; the row at condition ||u|| measures distance to the shifted set
    x_i + u, which is what the shifted network effectively was trained on.
    Functional equivalence of the shifted network is probed before
    attacking.
    """
    u = np.asarray(u, dtype=np.float64)
    params, _ = trainer.train_to_kkt(dataset, train_config)
    shifted = net.shift_bias_defense(params, u)

    rng = np.random.default_rng(np.random.SeedSequence([train_config.seed & 0xFFFFFFFF, 0xD3F]))
    probe_x = rng.standard_normal((probes, dataset.d))
    ref = net.forward_batch(params, probe_x)
    got = net.forward_batch(shifted, probe_x + u[None, :])
    worst = float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))
    if worst > 1e-6:
        raise DefenseTransformError(
            f"shifted network fails the equivalence probe: relative error {worst:.3e}"
        )

    shifted_data = dataset.shifted(u)
    lam = kkt.fit_multipliers(params, dataset)
    cert = kkt.certify(params, dataset, lam)
    lam_s = kkt.fit_multipliers(shifted, shifted_data)
    cert_s = kkt.certify(shifted, shifted_data, lam_s)

    rows = [
        _attack_row(params, dataset, cert, attack_config, 0.0, top_k),
        _attack_row(shifted, shifted_data, cert_s, attack_config,
                    float(np.linalg.norm(u)), top_k),
    ]
    config_echo = {
        "experiment": "defense_eval",
        "shift_norm": float(np.linalg.norm(u)),
        "top_k": int(top_k),
        "train": _train_config_doc(train_config),
        "attack": _attack_config_doc(attack_config),
    }
    return ExperimentReport(
        config=config_echo,
        rows=rows,
        environment=_environment_stamp(attack_config.seed),
        model_hash=net.model_hash(params),
        data_hash=data_hash(dataset),
    )


def _train_config_doc(cfg: trainer.TrainConfig) -> dict:
    return {
        "width": cfg.width,
        "loss_kind": cfg.loss_kind,
        "learning_rate": cfg.learning_rate,
        "max_epochs": cfg.max_epochs,
        "target_loss": cfg.target_loss,
        "seed": cfg.seed,
        "init_scale": cfg.init_scale,
        "lr_schedule": cfg.lr_schedule,
    }


def _attack_config_doc(cfg: attack.AttackConfig) -> dict:
    if isinstance(cfg.init, attack.SphereInit):
        init = {"kind": "sphere", "radius": cfg.init.radius}
    else:
        init = {"kind": "box", "lo": cfg.init.lo, "hi": cfg.init.hi}
    return {
        "m": cfg.m,
        "init": init,
        "label_assignment": cfg.label_assignment,
        "gamma1": cfg.weights.gamma1,
        "gamma2": cfg.weights.gamma2,
        "learning_rate": cfg.learning_rate,
        "iterations": cfg.iterations,
        "restarts": cfg.restarts,
        "seed": cfg.seed,
    }


# --- persistence ---------------------------------------------------------------

REPORT_COLUMNS = ("condition", "topk_mean_nn_distance", "final_kkt_loss",
                  "epsilon", "delta", "p")


def save_report(report: ExperimentReport, path) -> None:
    doc = {
        "config": report.config,
        "rows": [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in report.rows],
        "environment": report.environment,
        "model_hash": report.model_hash,
        "data_hash": report.data_hash,
    }
    with open(path, "w") as f:
        json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_report(path, params=None, dataset=None) -> ExperimentReport:
    with open(path) as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise ValidationError(f"bad report file {path}: {e}") from e
    if params is not None and doc.get("model_hash") != net.model_hash(params):
        raise HashMismatchError(f"{path}: report was computed from a different model")
    if dataset is not None and doc.get("data_hash") != data_hash(dataset):
        raise HashMismatchError(f"{path}: report was computed from a different dataset")
    rows = [ReportRow(**{c: float(row[c]) for c in REPORT_COLUMNS}) for row in doc["rows"]]
    return ExperimentReport(
        config=doc["config"],
        rows=rows,
        environment=doc["environment"],
        model_hash=doc["model_hash"],
        data_hash=doc["data_hash"],
    )


def write_report_csv(report: ExperimentReport, path) -> None:
    lines = [",".join(REPORT_COLUMNS)]
    for r in report.rows:
        lines.append(",".join(repr(float(getattr(r, c))) for c in REPORT_COLUMNS))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_report_csv(path) -> list[ReportRow]:
    with open(path) as f:
        header = f.readline().strip()
        if header != ",".join(REPORT_COLUMNS):
            raise ValidationError(f"{path}: unexpected header {header!r}")
        rows = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            vals = [float(t) for t in line.split(",")]
            rows.append(ReportRow(*vals))
    return rows


# --- SVG plot -------------------------------------------------------------------

SVG_WIDTH, SVG_HEIGHT = 640.0, 480.0
SVG_MARGIN = {"left": 64.0, "right": 20.0, "top": 20.0, "bottom": 48.0}


@dataclass(frozen=True)
class PlotGeometry:
    """Affine mapping from (condition, value) to SVG pixels."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @property
    def x_span(self) -> float:
        return SVG_WIDTH - SVG_MARGIN["left"] - SVG_MARGIN["right"]

    @property
    def y_span(self) -> float:
        return SVG_HEIGHT - SVG_MARGIN["top"] - SVG_MARGIN["bottom"]

    def px(self, c: float) -> float:
        return SVG_MARGIN["left"] + (c - self.xmin) / (self.xmax - self.xmin) * self.x_span

    def py(self, v: float) -> float:
        return SVG_MARGIN["top"] + (self.ymax - v) / (self.ymax - self.ymin) * self.y_span

    def inv(self, px: float, py: float) -> tuple[float, float]:
        c = self.xmin + (px - SVG_MARGIN["left"]) / self.x_span * (self.xmax - self.xmin)
        v = self.ymax - (py - SVG_MARGIN["top"]) / self.y_span * (self.ymax - self.ymin)
        return c, v


def plot_geometry(conditions, values) -> PlotGeometry:
    def padded(vals):
        lo, hi = float(min(vals)), float(max(vals))
        if lo == hi:
            pad = max(1.0, abs(lo) * 0.5)
            return lo - pad, hi + pad
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    xmin, xmax = padded(conditions)
    ymin, ymax = padded(values)
    return PlotGeometry(xmin, xmax, ymin, ymax)


def write_report_svg(report: ExperimentReport, path) -> None:
    """Scatter + line of condition vs top-k mean NN distance."""
    conds = [r.condition for r in report.rows]
    vals = [r.topk_mean_nn_distance for r in report.rows]
    left, bottom = SVG_MARGIN["left"], SVG_HEIGHT - SVG_MARGIN["bottom"]
    right, top = SVG_WIDTH - SVG_MARGIN["right"], SVG_MARGIN["top"]
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH:g}" '
        f'height="{SVG_HEIGHT:g}" viewBox="0 0 {SVG_WIDTH:g} {SVG_HEIGHT:g}">',
        f'<line x1="{left!r}" y1="{bottom!r}" x2="{right!r}" y2="{bottom!r}" stroke="black"/>',
        f'<line x1="{left!r}" y1="{bottom!r}" x2="{left!r}" y2="{top!r}" stroke="black"/>',
        f'<text x="{(left + right) / 2!r}" y="{SVG_HEIGHT - 10!r}" text-anchor="middle" '
        'font-size="13">condition</text>',
        f'<text x="14" y="{(top + bottom) / 2!r}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {(top + bottom) / 2!r})">top-k mean NN distance</text>',
    ]
    if conds:
        geom = plot_geometry(conds, vals)
        pts = [(geom.px(c), geom.py(v)) for c, v in zip(conds, vals)]
        for lab, x, anchor in ((geom.xmin, left, "start"), (geom.xmax, right, "end")):
            parts.append(
                f'<text x="{x!r}" y="{bottom + 16!r}" text-anchor="{anchor}" '
                f'font-size="11">{lab:.6g}</text>'
            )
        for lab, yy in ((geom.ymin, bottom), (geom.ymax, top)):
            parts.append(
                f'<text x="{left - 6!r}" y="{yy!r}" text-anchor="end" '
                f'font-size="11">{lab:.6g}</text>'
            )
        if len(pts) > 1:
            path_d = " ".join(f"{x!r},{y!r}" for x, y in pts)
            parts.append(f'<polyline points="{path_d}" fill="none" stroke="steelblue"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{x!r}" cy="{y!r}" r="3.5" fill="steelblue"/>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def emit_report(report: ExperimentReport, csv_path, svg_path) -> None:
    """Write the CSV table and the SVG plot; byte-stable given equal reports."""
    try:
        write_report_csv(report, csv_path)
        write_report_svg(report, svg_path)
    except OSError as e:
        raise ValidationError(f"cannot write report outputs: {e}") from e
