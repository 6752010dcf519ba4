"""Command-line entry point: generate | train | ensemble | evaluate | plot-data.

Exit status is 0 on success, 1 when the solver or training fails and 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config, resolve
from .dataset import Dataset, generate_dataset, load_csv, partition, save_csv
from .ensemble import (EnsembleReport, MemberFailed, derive_member_configs, gaussian_curve,
                       train_ensemble)
from .ode import SolverConfig, SolverError
from .pinn import (TrainConfig, TrainingDiverged, angle_mare, build_model, load_model,
                   predict_rotor_angle, save_model, train)
from .system import preset_system

log = logging.getLogger("swingpinn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

_DEFAULT_OUT = {
    "generate": "data.csv",
    "train": "model.json",
    "ensemble": "report.json",
    "evaluate": "metrics.csv",
    "plot-data": "plot.csv",
}


class UsageError(Exception):
    pass


def _global_flags(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int,
                        help="dataset seed (generate), training seed (train) or master seed (ensemble)")
    common.add_argument("--out", type=Path, help="output artifact path")
    common.add_argument("--jobs", type=int, help="parallel ensemble members")
    common.add_argument("--preset", choices=["1bus", "2bus"])
    return common


def _parser() -> argparse.ArgumentParser:
    # flags may come before or after the subcommand; the subcommand copy
    # suppresses its defaults so it never clobbers an earlier value
    common = _global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="swingpinn", parents=[_global_flags(None)],
                                     description="PINN uncertainty quantification for swing equations")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a ground-truth dataset CSV")
    p = sub.add_parser("train", parents=[common], help="train one PINN")
    p.add_argument("--data", type=Path, help="dataset CSV (generated from config if omitted)")
    p = sub.add_parser("ensemble", parents=[common], help="train an ensemble and write its report")
    p.add_argument("--data", type=Path, help="dataset CSV (generated from config if omitted)")
    p.add_argument("--skip-failed", action="store_true", help="drop diverged members instead of aborting")
    p = sub.add_parser("evaluate", parents=[common], help="angle errors on held-out trajectories")
    p.add_argument("--model", type=Path, required=True)
    p = sub.add_parser("plot-data", parents=[common], help="figure data as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", type=Path, help="ensemble report: Gaussian density curve")
    src.add_argument("--model", type=Path, help="trained model: predicted vs exact angles")
    p.add_argument("--trajectories", type=int, default=4)
    return parser


def _resolve_config(args) -> dict:
    overrides: dict = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.seed is not None:
        key = {"generate": ("dataset", "seed"), "train": ("train", "seed"),
               "ensemble": ("ensemble", "master_seed")}.get(args.command)
        if key:
            overrides.setdefault(key[0], {})[key[1]] = args.seed
    if args.jobs is not None:
        overrides.setdefault("ensemble", {})["jobs"] = args.jobs
    if args.config is not None:
        return parse_config(args.config, overrides)
    return resolve({}, overrides)


def _out_path(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    return Path(cfg["output"]["dir"]) / _DEFAULT_OUT[args.command]


def _echo(cfg: dict, out: Path) -> None:
    out.with_name(out.name + ".config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _solver(cfg) -> SolverConfig:
    return SolverConfig(rtol=cfg["dataset"]["rtol"], atol=cfg["dataset"]["atol"])


def _dataset(cfg, data_path=None) -> Dataset:
    system = preset_system(cfg["preset"])
    if data_path is not None:
        if not Path(data_path).is_file():
            raise UsageError(f"dataset not found: {data_path}")
        return load_csv(data_path, system=system.name)
    d = cfg["dataset"]
    return generate_dataset(system, d["n_traj"], d["n_steps"], d["seed"], _solver(cfg))


def _holdout(cfg) -> Dataset:
    d = cfg["dataset"]
    return generate_dataset(preset_system(cfg["preset"]), d["holdout_traj"], d["n_steps"],
                            d["holdout_seed"], _solver(cfg))


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def cmd_generate(args, cfg, out: Path) -> None:
    save_csv(_dataset(cfg), out)


def cmd_train(args, cfg, out: Path) -> None:
    system = preset_system(cfg["preset"])
    data = _dataset(cfg, args.data)
    d, tc = cfg["dataset"], _train_config(cfg)
    n_coll = min(d["n_collocation"], data.n_samples)
    part = partition(data, n_coll, d["labeled_fraction"], d["seed"])
    model, history = train(build_model(system, tc.seed), part.labeled, part.collocation, tc,
                           log_every=max(1, tc.iterations // 20))
    save_model(model, out, tc)
    hist = out.with_name(out.stem + ".history.csv")
    with hist.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "data", "physics", "total"])
        for k, h in enumerate(history):
            w.writerow([k, repr(h.data), repr(h.physics), repr(h.total)])


def cmd_ensemble(args, cfg, out: Path) -> None:
    system = preset_system(cfg["preset"])
    data = _dataset(cfg, args.data)
    e = cfg["ensemble"]
    n_coll = min(cfg["dataset"]["n_collocation"], data.n_samples)
    configs = derive_member_configs(e["n_members"], system, _train_config(cfg), e["master_seed"],
                                    e["noise_palette"], n_coll)
    _, report = train_ensemble(system, data, configs, level=e["confidence_level"],
                               jobs=e["jobs"], fail_fast=not args.skip_failed,
                               holdout=_holdout(cfg))
    out.write_text(report.to_json())
    log.info("mu=%.6f sigma=%.6f ci=[%.6f, %.6f]", report.mu, report.sigma, report.lo, report.hi)


def _load_model(path):
    if not Path(path).is_file():
        raise UsageError(f"model not found: {path}")
    return load_model(path)


def cmd_evaluate(args, cfg, out: Path) -> None:
    model = _load_model(args.model)
    hold = _holdout(cfg)
    t, p, truth = hold.flat()
    pred = predict_rotor_angle(model, t, p).reshape(hold.angles.shape)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "P", "gen", "mae", "relative_error"])
        for k in range(hold.n_traj):
            for g in range(hold.n_gen):
                err = np.abs(pred[k, :, g] - hold.angles[k, :, g])
                rel = err.sum() / np.abs(hold.angles[k, :, g]).sum()
                w.writerow([k, repr(float(hold.p_inputs[k])), g + 1, repr(float(err.mean())),
                            repr(float(rel))])
        w.writerow(["mean", "", "", "", repr(angle_mare(model, hold))])


def cmd_plot_data(args, cfg, out: Path) -> None:
    if args.report is not None:
        if not args.report.is_file():
            raise UsageError(f"report not found: {args.report}")
        report = EnsembleReport.from_dict(json.loads(args.report.read_text()))
        x, pdf = gaussian_curve(report.mu, report.sigma2, 401)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "density"])
            for a, b in zip(x, pdf):
                w.writerow([repr(float(a)), repr(float(b))])
        return
    model = _load_model(args.model)
    hold = _holdout(cfg)
    n = min(args.trajectories, hold.n_traj)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "t", "P", "gen", "predicted", "exact"])
        for k in range(n):
            pred = predict_rotor_angle(model, hold.times, np.full(hold.n_steps, hold.p_inputs[k]))
            for j, tj in enumerate(hold.times):
                for g in range(hold.n_gen):
                    w.writerow([k, repr(float(tj)), repr(float(hold.p_inputs[k])), g + 1,
                                repr(float(pred[j, g])), repr(float(hold.angles[k, j, g]))])


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    level = os.environ.get("SWINGPINN_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        out = _out_path(args, cfg)
        out.parent.mkdir(parents=True, exist_ok=True)
        _echo(cfg, out)
        COMMANDS[args.command](args, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"swingpinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, TrainingDiverged, MemberFailed, RuntimeError, ValueError) as exc:
        print(f"swingpinn: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
