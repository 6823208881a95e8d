"""Command line entry point: data generation, identification, theory checks, closed-loop runs.

Exit codes: 0 success, 1 validation failure, 2 configuration error, 3 divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, data, learning, sim
from .config import CHAINS, ExperimentConfig, apply_overrides, load_config, merge
from .dynamics import ConfigurationError, ResidualDynamicsModel

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = apply_overrides(load_config(args.config), args.set)
    if getattr(args, "seed", None) is not None:
        cfg = merge(cfg, {"seed": args.seed})
    return cfg


def _writable_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {p}: {exc}") from exc
    return p


# -- gen-data -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if args.duration is not None:
        cfg = merge(cfg, {"logs": {"duration": args.duration}})
    if args.n_logs is not None:
        cfg = merge(cfg, {"logs": {"n_logs": args.n_logs}})
    out = _writable_dir(args.out or cfg.output.data_dir)
    logs = data.generate_logs(cfg.plant, cfg.logs, seed=cfg.seed)
    for i, log in enumerate(logs):
        log.to_csv(out / f"log_{i:03d}.csv")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    print(f"wrote {len(logs)} logs, {data.total_samples(logs)} samples to {out}")
    return EXIT_OK


# -- identify -------------------------------------------------------------------

def load_logs(data_dir) -> list:
    d = Path(data_dir)
    if not d.is_dir():
        raise ConfigurationError(f"data directory {d} does not exist; run gen-data first")
    files = sorted(d.glob("log_*.csv"))
    if not files:
        raise ConfigurationError(f"no log_*.csv files in {d}")
    return [data.RawLog.from_csv(f) for f in files]


def r2_table(reports: dict) -> str:
    names = ("X", "Y", "s", "c", "vX", "vY", "r")
    head = f"{'model':<10} " + " ".join(f"{n:>7}" for n in names) + f" {'avg':>7}"
    lines = [head, "-" * len(head)]
    for label, rep in reports.items():
        lines.append(f"{label:<10} " + " ".join(f"{v:7.4f}" for v in rep.per_dim) + f" {rep.average:7.4f}")
    return "\n".join(lines)


def cmd_identify(args) -> int:
    cfg = _config(args)
    logs = load_logs(args.data or cfg.output.data_dir)
    model_path = Path(args.out or cfg.output.model_path)
    out = _writable_dir(model_path.parent)
    splits = data.preprocess(logs, cfg.preprocess)
    if args.save_segments:
        splits.save(out / "segments")
    X, U, Xn = data.transitions(splits.train)
    phys = learning.fit_physical_params(X, U, Xn, cfg.h)
    x_scale, u_scale = learning.compute_scales(splits.train)
    base = ResidualDynamicsModel.physical_only(phys, x_scale, u_scale, h=cfg.h)
    reports = {"physical": learning.recursive_r2(base, splits.test)}
    stem = model_path.with_suffix("")
    base.save(f"{stem}_physical.json")
    if args.model in ("all", "standard"):
        dm, dres = learning.train_delta_network(x_scale, u_scale, splits.train, splits.val, cfg.training,
                                                hidden=cfg.hidden)
        dres.write_history(f"{stem}_standard_loss.csv")
        reports["standard"] = learning.recursive_r2(dm, splits.test)
    if args.model in ("all", "residual"):
        model, res = learning.train_residual(base, splits.train, splits.val, cfg.training)
        res.write_history(f"{stem}_residual_loss.csv")
        model.save(model_path)
        reports["residual"] = learning.recursive_r2(model, splits.test)
    else:
        base.save(model_path)
    summary = {
        "segments": {"train": len(splits.train), "val": len(splits.val), "test": len(splits.test)},
        "physical_params": phys.__dict__, "r2": {k: v.as_dict() for k, v in reports.items()},
    }
    Path(f"{stem}_r2.json").write_text(json.dumps(analysis.to_jsonable(summary), indent=1) + "\n")
    print(f"physical parameters: {phys}")
    print(r2_table(reports))
    print(f"model written to {model_path}")
    return EXIT_OK


# -- validate-theory ------------------------------------------------------------

def cmd_validate_theory(args) -> int:
    cfg = _config(args)
    out = _writable_dir(args.out or cfg.output.reports_dir)
    reports = analysis.run_validators(only=args.only, seed=cfg.seed)
    ok = True
    for rep in reports:
        (out / f"{rep.name}.json").write_text(json.dumps(rep.as_dict(), indent=1) + "\n")
        print(f"{rep.name:<12} {'PASS' if rep.passed else 'FAIL'}")
        ok &= bool(rep.passed)
    return EXIT_OK if ok else EXIT_VALIDATION


# -- run ------------------------------------------------------------------------

def _load_model(path) -> ResidualDynamicsModel:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"model file {p} not found; run identify first")
    return ResidualDynamicsModel.load(p)


def _plant(cfg: ExperimentConfig, model_path):
    if cfg.scenario.plant == "identified":
        return sim.ModelPlant(_load_model(model_path))
    return cfg.plant


def cmd_run(args) -> int:
    cfg = _config(args)
    changes = {}
    if args.scenario:
        changes["scenario"] = {"name": args.scenario}
    if args.controller:
        changes.setdefault("scenario", {})["controller"] = args.controller
    if args.samples is not None:
        changes["optimizer"] = {"I": args.samples}
    if args.seeds:
        changes["seeds"] = args.seeds
    if changes:
        cfg = merge(cfg, changes)
    model_path = args.model or cfg.output.model_path
    model = _load_model(model_path)
    plant = _plant(cfg, model_path)
    out = _writable_dir(args.out or cfg.output.runs_dir)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    if args.matrix:
        if cfg.scenario.name in CHAINS:
            raise ConfigurationError("the matrix runs single scenarios; pick a preset that is not a chain")
        runs = sim.matrix_scenarios(cfg.build_scenario(), budgets=cfg.budgets, seeds=cfg.seeds)
        records = sim.run_many(runs, model, plant, out_dir=out, jobs=args.jobs)
    else:
        records = []
        for seed in (cfg.seeds if args.seeds else (cfg.seed,)):
            chain = cfg.build_chain(seed=seed)
            recs = sim.run_chain(chain, model, plant)
            for r in recs:
                sim.save_record(r, out)
            records.extend(recs)
    rows = sim.summarize(records)
    sim.write_summary(rows, out)
    _plots(records, out)
    print(sim.format_table(rows))
    return EXIT_DIVERGED if any(r.diverged for r in records) else EXIT_OK


def _plots(records, out: Path) -> None:
    """One SVG per scenario with the first seed of every controller and budget."""
    by_name: dict = {}
    for r in records:
        s = r.scenario
        by_name.setdefault((s.name, s.start, s.goal, s.path_points), {}).setdefault(
            f"{s.controller} I={s.samples}", r.x)
    for (name, start, goal, M), trajs in by_name.items():
        ref = sim.build_hermite_path(start, goal, M).points
        sim.write_svg(out / f"{name}.svg", ref, trajs)


# -- dump-config ----------------------------------------------------------------

def cmd_dump_config(args) -> int:
    print(_config(args).to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. optimizer.I=16 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")

    p = argparse.ArgumentParser(prog="mppi-pid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="simulate driving logs from the synthetic plant")
    g.add_argument("--out", help="output directory (default output.data_dir)")
    g.add_argument("--duration", type=float, help="seconds per log")
    g.add_argument("--n-logs", type=int)
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("identify", parents=[common], help="fit physical parameters and train the networks")
    i.add_argument("--data", help="directory of log_*.csv files (default output.data_dir)")
    i.add_argument("--out", help="model JSON path (default output.model_path)")
    i.add_argument("--model", choices=("all", "physical", "standard", "residual"), default="all")
    i.add_argument("--save-segments", action="store_true", help="also write the train/val/test segments")
    i.set_defaults(func=cmd_identify)

    v = sub.add_parser("validate-theory", parents=[common], help="run the numerical checks of the sampling theory")
    v.add_argument("--only", action="append", choices=("kl", "gradient", "ess", "continuity"))
    v.add_argument("--out", help="report directory (default output.reports_dir)")
    v.set_defaults(func=cmd_validate_theory)

    r = sub.add_parser("run", parents=[common], help="closed-loop path following")
    r.add_argument("--model", help="identified model JSON (default output.model_path)")
    r.add_argument("--scenario", help="preset name: straight, curve, s_curve, s_curve_a, s_curve_b")
    r.add_argument("--controller", choices=sim.CONTROLLERS)
    r.add_argument("--samples", type=int, help="sample count I")
    r.add_argument("--seeds", type=int, nargs="+", help="run once per seed")
    r.add_argument("--matrix", action="store_true", help="every controller and budget for each seed")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs in the matrix")
    r.add_argument("--out", help="output directory (default output.runs_dir)")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("dump-config", parents=[common], help="print the effective config as JSON")
    d.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (analysis.ValidationError, learning.IdentificationError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except learning.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
