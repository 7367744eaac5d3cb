"""Command-line entry point: ``sparseham <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_io
from .config import ConfigError, bundled_recipes, load_config
from .evaluation import evaluate, rollout_divergence
from .experiment import ablate, make_datasets, make_system, run_training, training_set
from .integrators import SCHEMES, IntegrationError
from .model import extract_equation, load_model, save_model
from .systems import system_from_config
from .training import TrainingDivergedError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _config(args):
    overrides = {"scheme": getattr(args, "integrator", None), "eps": getattr(args, "eps", None),
                 "seed": getattr(args, "seed", None)}
    return load_config(args.config, overrides)


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    sets = make_datasets(cfg)
    files = {}
    for name, ds in sets.items():
        data_io.save(ds, out / f"{name}.csv")
        files[name] = {"file": f"{name}.csv", "samples": len(ds), "targets": ds.n_targets}
    manifest = {
        "name": cfg.name,
        "system": make_system(cfg).descriptor(),
        "dataset": cfg.dataset,
        "validation": cfg.validation,
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {', '.join(f['file'] for f in files.values())} to {out}")
    return EXIT_OK


def _load_or_generate(args, cfg):
    if args.dataset:
        return data_io.load(args.dataset)
    return training_set(make_datasets(cfg))


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ds = _load_or_generate(args, cfg)
    try:
        report = run_training(cfg, ds, progress=print)
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        print("last parameters: " + " ".join(_fmt(v) for v in exc.params), file=sys.stderr)
        return EXIT_NUMERIC
    save_model(report.model, out / "model.json")
    _write_json(out / "report.json", report.to_dict())
    eq = extract_equation(report.model, cfg.display_threshold)
    (out / "equation.txt").write_text(eq.render() + "\n")
    print(f"H = {eq.render()}")
    return EXIT_OK


def _truth_for(ds):
    if not ds.system:
        return None
    try:
        return system_from_config(ds.system)
    except ValueError:
        return None


def cmd_eval(args) -> int:
    cfg = _config(args) if args.config else None
    eps = args.eps if args.eps is not None else (cfg.integrator.eps if cfg else 0.01)
    scheme = args.integrator or (cfg.integrator.scheme if cfg else "symplectic4")
    threshold = args.threshold if args.threshold is not None else (cfg.support_threshold if cfg else 1e-3)
    model = load_model(args.model)
    ds = data_io.load(args.dataset)
    if len(ds) == 0:
        raise ConfigError(f"dataset {args.dataset} is empty")
    if ds.dim != model.dim:
        raise ConfigError(f"dataset has dimension {ds.dim}, model has {model.dim}")
    system = _truth_for(ds)
    truth = system.truth_equation() if system is not None else None
    report, stats = evaluate(model, ds, eps, scheme, truth, threshold)
    report.extra.update(eps=eps, scheme=scheme)
    out = _out(args)
    report.to_json(out / "eval.json")
    _write_csv(out / "eval.csv", ["index", "position_l1", "momentum_l1"],
               ([str(i), a, b] for i, (a, b) in enumerate(zip(stats.position_l1, stats.momentum_l1))))
    p = report.prediction
    print(f"position_l1_mean={_fmt(p['position_l1_mean'])} momentum_l1_mean={_fmt(p['momentum_l1_mean'])} "
          f"failures={p['failures']}/{p['count']}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    system = make_system(cfg)
    if system.dim != model.dim:
        raise ConfigError(f"system has dimension {system.dim}, model has {model.dim}")
    spec = dict(cfg.rollout)
    T, dt = float(spec.get("T", 8.0)), float(spec.get("dt", 0.1))
    eps = cfg.integrator.eps
    if "q0" in spec:
        starts = [(np.array(spec["q0"], dtype=float), np.array(spec["p0"], dtype=float))]
    else:
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        starts = [(s.q, s.p) for s in (system.sample_initial_state(rng) for _ in range(int(spec.get("n_trajectories", 1))))]
    for start in starts:
        if start[0].shape != (system.dim,) or start[1].shape != (system.dim,):
            raise ConfigError(f"field rollout.q0/p0 must have {system.dim} entries")
    out = _out(args)
    series = []
    for i, (q0, p0) in enumerate(starts):
        s = rollout_divergence(model, system, q0, p0, T, dt, eps, cfg.integrator.scheme,
                               float(spec.get("ref_eps", 1e-4)))
        name = "rollout.csv" if len(starts) == 1 else f"rollout_{i:03d}.csv"
        s.to_csv(out / name)
        series.append(s)
    if len(series) > 1:
        _write_csv(out / "rollout_mean.csv", ["t", "position_l1", "energy_abs_err"],
                   zip(series[0].t, np.mean([s.position_l1 for s in series], axis=0),
                       np.mean([s.energy_abs_err for s in series], axis=0)))
    last = np.mean([s.position_l1[-1] for s in series])
    print(f"{len(series)} rollout(s) to t={T}: final mean position_l1={_fmt(last)}")
    return EXIT_OK


def cmd_extract(args) -> int:
    model = load_model(args.model)
    eq = extract_equation(model, args.threshold)
    print(f"H = {eq.render()}")
    if args.out:
        out = _out(args)
        (out / "equation.txt").write_text(eq.render() + "\n")
        if args.prune:
            save_model(prune(model, args.threshold), out / "model_pruned.json")
    return EXIT_OK


def prune(model, threshold: float):
    """Copy with linear coefficients below ``threshold`` in magnitude set to 0."""
    out = model.copy()
    for basis, theta in (out.network("V"), out.network("T")):
        coef = theta[: basis.n_terms]
        coef[np.abs(coef) < threshold] = 0.0
    return out


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if args.dataset:
        train_ds = data_io.load(args.dataset)
        validation = make_datasets(cfg)["validation"]
    else:
        sets = make_datasets(cfg)
        train_ds, validation = training_set(sets), sets["validation"]
    schemes = [args.integrator] if args.integrator else cfg.ablate.get("schemes", list(SCHEMES))
    rows = ablate(cfg, train_ds, validation, schemes, progress=print)
    nan = float("nan")
    _write_csv(out / "ablation.csv", ["scheme", "status", "position_l1", "momentum_l1", "total_l1"],
               ([r["scheme"], r["status"], r.get("position_l1", nan), r.get("momentum_l1", nan),
                 r.get("total_l1", nan)] for r in rows))
    for r in rows:
        print(f"{r['scheme']}: {r['status']} total_l1={_fmt(r.get('total_l1', nan))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseham", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, dataset=False, model=False, out="out"):
        if config:
            p.add_argument("--config", required=config == "required",
                           help=f"recipe file or bundled name ({', '.join(bundled_recipes())})")
        if dataset:
            p.add_argument("--dataset", required=dataset == "required")
        if model:
            p.add_argument("--model", required=True)
        p.add_argument("--out", default=out)
        p.add_argument("--integrator", choices=SCHEMES)
        p.add_argument("--eps", type=float)
        p.add_argument("--seed", type=int)

    common(sub.add_parser("generate", help="write train/validation datasets"), config="required")
    common(sub.add_parser("train", help="fit a model"), config="required", dataset=True)
    p = sub.add_parser("eval", help="score a model on a dataset")
    common(p, dataset="required", model=True)
    p.add_argument("--threshold", type=float)
    common(sub.add_parser("rollout", help="long-horizon error and energy series"), config="required", model=True)
    p = sub.add_parser("extract", help="print the learned equation")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out")
    p.add_argument("--prune", action="store_true", help="also write a copy with small terms zeroed")
    common(sub.add_parser("ablate", help="train once per integrator"), config="required", dataset=True)
    return parser


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "rollout": cmd_rollout,
            "extract": cmd_extract, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (TrainingDivergedError, IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, data_io.DatasetFormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
