"""Umbrella command-line interface.

Subcommands: gen-data, train, certify, attack, forge, sweep, defend, report.
Exit codes: 0 success, 2 validation error, 3 numeric failure. A JSON config
file may supply defaults for the train/attack sections; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import attack, data, forge, kkt, lab, net, trainer
from ._version import __version__
from .errors import NumericError, ValidationError


def _load_file_config(path):
    if path is None:
        return {}
    with open(path) as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise ValidationError(f"bad config file {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return doc


def _pick(cli_value, file_cfg: dict, section: str, key: str, default):
    if cli_value is not None:
        return cli_value
    return file_cfg.get(section, {}).get(key, default)


def _out_path(args, name: str) -> str:
    p = Path(name)
    if args.out_dir and not p.is_absolute():
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return str(Path(args.out_dir) / p)
    return str(p)


def _info(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _parse_init(spec: str):
    if spec.startswith("sphere:"):
        return attack.SphereInit(float(spec.split(":", 1)[1]))
    if spec.startswith("box:"):
        lo, hi = spec.split(":", 1)[1].split(",")
        return attack.BoxInit(float(lo), float(hi))
    raise ValidationError(f"bad init spec {spec!r}; use sphere:<r> or box:<lo>,<hi>")


def _train_config(args, file_cfg, d_unused=None) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        width=int(_pick(args.width, file_cfg, "train", "width", 64)),
        loss_kind=_pick(getattr(args, "loss", None), file_cfg, "train", "loss_kind", "logistic"),
        learning_rate=float(_pick(args.lr, file_cfg, "train", "learning_rate", 0.05)),
        max_epochs=int(_pick(args.epochs, file_cfg, "train", "max_epochs", 50_000)),
        target_loss=float(_pick(args.target_loss, file_cfg, "train", "target_loss", 1e-7)),
        seed=int(_pick(args.seed, file_cfg, "train", "seed", args.global_seed)),
        init_scale=_pick(getattr(args, "init_scale", None), file_cfg, "train", "init_scale", None),
        lr_schedule=_pick(getattr(args, "schedule", None), file_cfg, "train", "lr_schedule",
                          "loss_normalized"),
    )


def _attack_config(args, file_cfg, m_default: int) -> attack.AttackConfig:
    init_spec = _pick(getattr(args, "init", None), file_cfg, "attack", "init", "sphere:1.0")
    init = _parse_init(init_spec) if isinstance(init_spec, str) else init_spec
    return attack.AttackConfig(
        m=int(_pick(getattr(args, "m", None), file_cfg, "attack", "m", m_default)),
        init=init,
        label_assignment=_pick(getattr(args, "labels", None), file_cfg, "attack",
                               "label_assignment", "balanced"),
        weights=kkt.KKTLossWeights(
            gamma1=float(_pick(getattr(args, "gamma1", None), file_cfg, "attack", "gamma1", 1.0)),
            gamma2=float(_pick(getattr(args, "gamma2", None), file_cfg, "attack", "gamma2", 1.0)),
        ),
        learning_rate=float(_pick(getattr(args, "attack_lr", None), file_cfg, "attack",
                                  "learning_rate", 0.05)),
        iterations=int(_pick(getattr(args, "iters", None), file_cfg, "attack",
                             "iterations", 2000)),
        restarts=int(_pick(getattr(args, "restarts", None), file_cfg, "attack", "restarts", 4)),
        seed=int(_pick(getattr(args, "attack_seed", None), file_cfg, "attack", "seed",
                       args.global_seed)),
    )


# --- subcommand handlers ---------------------------------------------------------

def _cmd_gen_data(args, file_cfg):
    ds = data.gen_sphere_dataset(args.n, args.d, args.seed if args.seed is not None
                                 else args.global_seed)
    out = _out_path(args, args.out)
    data.save_dataset(ds, out)
    _info(args, f"wrote {ds.n} x {ds.d} sphere dataset to {out}")
    return 0


def _cmd_train(args, file_cfg):
    ds = data.load_dataset(args.data)
    cfg = _train_config(args, file_cfg)
    params, trace = trainer.train_to_kkt(ds, cfg)
    out = _out_path(args, args.out)
    net.save_model(params, out, meta={"data_hash": data.data_hash(ds),
                                      "final_loss": trace.records[-1].loss})
    _info(args, f"trained to loss {trace.records[-1].loss:.3e} "
                f"in {trace.records[-1].epoch} epochs; model at {out}")
    if args.trace:
        trace.to_csv(_out_path(args, args.trace))
    return 0


def _cmd_certify(args, file_cfg):
    params = net.load_model(args.model)
    ds = data.load_dataset(args.data)
    lam = kkt.fit_multipliers(params, ds)
    cert = kkt.certify(params, ds, lam, p=args.p)
    out = _out_path(args, args.out)
    kkt.save_certificate(cert, out, params, ds)
    _info(args, f"epsilon={cert.epsilon:.6e} delta={cert.delta:.6e} p={cert.p:.6e} "
                f"-> {out}")
    if args.set_out:
        data.save_dataset(ds, _out_path(args, args.set_out), multipliers=lam.values)
    return 0


def _cmd_attack(args, file_cfg):
    params = net.load_model(args.model)
    true_set = data.load_dataset(args.true_data) if args.true_data else None
    cfg = _attack_config(args, file_cfg, m_default=2 * true_set.n if true_set else 32)
    result = attack.reconstruct(params, cfg, true_set=true_set)
    recon = data.LabeledDataset(result.candidates, result.labels)
    data.save_dataset(recon, _out_path(args, args.out), multipliers=result.multipliers)
    doc = {
        "final_kkt_loss": result.final_kkt_loss,
        "restart_losses": [x if math.isfinite(x) else "diverged"
                           for x in result.restart_losses.tolist()],
    }
    if true_set is not None:
        k = min(args.topk, cfg.m)
        dists, topk_mean = attack.nn_metrics(result.candidates, true_set, top_k=k)
        doc["topk_mean_nn_distance"] = topk_mean
        doc["per_candidate_nn_distance"] = dists.tolist()
    if args.report:
        with open(_out_path(args, args.report), "w") as f:
            json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
            f.write("\n")
    _info(args, f"final KKT loss {result.final_kkt_loss:.6e}")
    return 0


def _load_weighted_set(args, params):
    if args.cert:
        ds = data.load_dataset(args.set)
        cert = kkt.load_certificate(args.cert, params=params, dataset=ds)
        return forge.WeightedSet(ds.X, ds.y, cert.multipliers), cert
    ds, lam = data.load_dataset(args.set, with_multipliers=True)
    return forge.WeightedSet(ds.X, ds.y, kkt.Multipliers(lam)), None


def _load_direction(args, wset):
    if args.nu_file:
        nu = np.loadtxt(args.nu_file, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(nu))
        if norm == 0:
            raise ValidationError(f"{args.nu_file}: zero direction")
        return nu / norm
    nu, _ = forge.svd_direction(wset)
    return nu


def _cmd_forge(args, file_cfg):
    params = net.load_model(args.model)
    wset, cert = _load_weighted_set(args, params)
    eps = cert.epsilon if cert is not None else wset.residual(params)[0]

    if args.action == "merge":
        out_set = forge.merge(wset, args.index, args.index2, params)
    elif args.action == "split":
        nu = _load_direction(args, wset)
        gamma = forge.measured_gamma(wset, nu)
        alpha = args.alpha
        beta = args.beta if args.beta is not None else args.alpha
        if alpha is None:
            budget = forge.split_budget_approx(params, wset, args.index, gamma, eps)
            alpha = beta = 0.5 * budget
        plan = forge.SplitPlan(index=args.index, nu=nu, alpha=alpha, beta=beta, gamma=gamma)
        out_set = forge.split(wset, plan, params)
    elif args.action == "distant":
        out_set = forge.construct_distant_kkt_set(params, wset, args.radius)
    elif args.action == "budget":
        nu = _load_direction(args, wset)
        report = forge.budget_report(params, wset, args.index, nu, eps)
        out = _out_path(args, args.report or "budget.json")
        forge.save_budget_report(report, out)
        _info(args, f"safe budget {report.safe_budget:.6e} "
                    f"(oracle {report.oracle_budget:.6e}) -> {out}")
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationError(f"unknown forge action {args.action!r}")

    out = _out_path(args, args.out)
    data.save_dataset(out_set.dataset, out, multipliers=out_set.lam)
    norm_before = wset.residual(params)[0]
    norm_after = out_set.residual(params)[0]
    _info(args, f"{args.action}: {wset.size} -> {out_set.size} points; "
                f"residual {norm_before:.6e} -> {norm_after:.6e}; set at {out}")
    if args.report:
        doc = {"action": args.action, "residual_before": norm_before,
               "residual_after": norm_after, "size": out_set.size}
        with open(_out_path(args, args.report), "w") as f:
            json.dump(doc, f, allow_nan=False, sort_keys=True, separators=(",", ":"))
            f.write("\n")
    return 0


def _cmd_sweep(args, file_cfg):
    ds = data.load_dataset(args.data)
    train_cfg = _train_config(args, file_cfg)
    attack_cfg = _attack_config(args, file_cfg, m_default=2 * ds.n)
    radii = [float(t) for t in args.radii.split(",")]
    report = lab.run_radius_sweep(ds, train_cfg, attack_cfg, radii, top_k=args.topk)
    _emit_experiment(args, report)
    return 0


def _cmd_defend(args, file_cfg):
    ds = data.load_dataset(args.data)
    if args.u_file:
        u = np.loadtxt(args.u_file, dtype=np.float64).reshape(-1)
    elif args.shift_scale is not None:
        u = np.full(ds.d, args.shift_scale)
    else:
        raise ValidationError("defend needs --u-file or --shift-scale")
    train_cfg = _train_config(args, file_cfg)
    attack_cfg = _attack_config(args, file_cfg, m_default=2 * ds.n)
    report = lab.run_defense_eval(ds, u, train_cfg, attack_cfg, top_k=args.topk)
    _emit_experiment(args, report)
    return 0


def _emit_experiment(args, report):
    json_out = _out_path(args, args.out_json)
    lab.save_report(report, json_out)
    lab.emit_report(report, _out_path(args, args.out_csv), _out_path(args, args.out_svg))
    _info(args, f"report: {json_out}")
    for row in report.rows:
        _info(args, f"  condition {row.condition:g}: top-k mean NN distance "
                    f"{row.topk_mean_nn_distance:.6f}")


def _cmd_report(args, file_cfg):
    report = lab.load_report(args.infile)
    lab.emit_report(report, _out_path(args, args.out_csv), _out_path(args, args.out_svg))
    _info(args, f"emitted {args.out_csv} and {args.out_svg}")
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kktforge",
        description="Train, certify, attack, and forge KKT sets for 2-layer ReLU classifiers",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="JSON file with train/attack defaults")
    ap.add_argument("--seed", dest="global_seed", type=int, default=0,
                    help="fallback seed for subcommands")
    ap.add_argument("--out-dir", help="directory prefix for relative output paths")
    ap.add_argument("--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a labeled sphere dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="full-batch GD to a near-KKT point")
    p.add_argument("--data", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--loss", choices=trainer.LOSS_KINDS)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--target-loss", dest="target_loss", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--schedule", choices=trainer.LR_SCHEDULES)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("certify", help="fit multipliers and measure (epsilon, delta)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--p", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--set-out", dest="set_out",
                   help="also write the weighted set CSV (with lambda column)")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("attack", help="prior-free reconstruction attack")
    p.add_argument("--model", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--init", help="sphere:<r> or box:<lo>,<hi>")
    p.add_argument("--labels", choices=attack.LABEL_ASSIGNMENTS)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--lr", dest="attack_lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", dest="attack_seed", type=int)
    p.add_argument("--true-data", dest="true_data")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("forge", help="construct alternative KKT sets")
    p.add_argument("action", choices=("merge", "split", "distant", "budget"))
    p.add_argument("--model", required=True)
    p.add_argument("--set", required=True, help="set CSV (lambda column or --cert)")
    p.add_argument("--cert", help="certificate JSON supplying the multipliers")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--index2", type=int, default=1, help="second index for merge")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--nu-file", dest="nu_file", help="direction vector, one value per line")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--out", default="newset.csv")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_forge)

    p = sub.add_parser("sweep", help="radius sweep of the attacker's prior")
    p.add_argument("--data", required=True)
    p.add_argument("--radii", required=True, help="comma-separated radii")
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("defend", help="evaluate the bias-shift defense")
    p.add_argument("--data", required=True)
    p.add_argument("--u-file", dest="u_file")
    p.add_argument("--shift-scale", dest="shift_scale", type=float)
    _add_experiment_flags(p)
    p.set_defaults(func=_cmd_defend)

    p = sub.add_parser("report", help="re-emit CSV/SVG from a report JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-csv", dest="out_csv", default="report.csv")
    p.add_argument("--out-svg", dest="out_svg", default="report.svg")
    p.set_defaults(func=_cmd_report)

    return ap


def _add_experiment_flags(p):
    p.add_argument("--width", type=int)
    p.add_argument("--loss", choices=trainer.LOSS_KINDS)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--target-loss", dest="target_loss", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--schedule", choices=trainer.LR_SCHEDULES)
    p.add_argument("--m", type=int)
    p.add_argument("--init", help="attack init, sphere:<r> or box:<lo>,<hi>")
    p.add_argument("--labels", choices=attack.LABEL_ASSIGNMENTS)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--attack-lr", dest="attack_lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--attack-seed", dest="attack_seed", type=int)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out-csv", dest="out_csv", default="report.csv")
    p.add_argument("--out-svg", dest="out_svg", default="report.svg")
    p.add_argument("--out-json", dest="out_json", default="report.json")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_cfg = _load_file_config(args.config)
        return args.func(args, file_cfg)
    except (ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
