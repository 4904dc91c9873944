"""Command-line entry point: ``flexihaz simulate | fit | infer | replicate``.

Every command writes its outputs atomically plus a ``<out>.manifest.json``
recording the resolved configuration, seed, artifact paths, wall-clock
duration and package version.  All computations are single-threaded and
seeded, so re-running a manifest's configuration reproduces its outputs
bit for bit.

Exit codes: 0 success, 2 usage, 3 ingestion or missing file, 4 numerical,
5 estimation, 6 inference (singular information).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv, write_csv
from .errors import ConfigurationError, FlexiHazError, IngestionError
from .fit import FitConfig, train
from .inference import cross_fit_residuals, information, wald_ci
from .likelihood import ModelState
from .simstudy import MODES, replicate
from .simulate import SimConfig, simulate

log = logging.getLogger("flexihaz")

JOBS_ENV = "FLEXIHAZ_THREADS"
EXIT_USAGE = 2
EXIT_FILE = 3


class UsageError(FlexiHazError):
    exit_code = EXIT_USAGE


def _atomic_write(path: Path, write) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    if not path.parent.is_dir():
        raise UsageError(f"output directory does not exist: {path.parent}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_json(path: Path, doc) -> None:
    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    _atomic_write(path, write)


def _write_text(path: Path, text: str) -> None:
    def write(tmp):
        Path(tmp).write_text(text, encoding="utf-8")
    _atomic_write(path, write)


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(command: str, out, config: dict, seed, artifacts: list, start: float):
    _write_json(manifest_path(out), {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "duration_seconds": time.perf_counter() - start,
        "version": __version__,
    })


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _level(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {value}")
    return value


def _fit_config(args) -> FitConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise IngestionError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})")
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: expected a JSON object")
    cfg = FitConfig.from_dict(doc)
    overrides = {k: getattr(args, k) for k in ("grid_size", "seed", "max_epochs")
                 if getattr(args, k, None) is not None}
    return FitConfig.from_dict({**cfg.to_dict(), **overrides}) if overrides else cfg


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{what} not found: {path}")
    return path


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    kwargs = {"n": args.n, "seed": args.seed}
    if args.theta is not None:
        kwargs["theta_true"] = tuple(args.theta)
    for key in ("tau", "censor_rate", "base_rate"):
        if getattr(args, key) is not None:
            kwargs[key] = getattr(args, key)
    sim = SimConfig(**kwargs)
    data = simulate(sim)
    _atomic_write(Path(args.out), lambda tmp: write_csv(data, tmp))
    _write_manifest("simulate", args.out, sim.to_dict(), sim.seed, [args.out], start)
    print(f"wrote {data.n} records ({data.n_events} events) to {args.out}")
    return 0


def cmd_fit(args) -> int:
    start = time.perf_counter()
    cfg = _fit_config(args)
    data = load_csv(_require_file(args.data, "data file"), tau=cfg.tau)
    result = train(data, cfg)
    doc = {"config": cfg.to_dict(), "data": str(args.data), **result.to_dict()}
    _write_json(Path(args.out), doc)
    _write_manifest("fit", args.out, cfg.to_dict(), cfg.seed, [args.out], start)
    print(f"theta = {np.array2string(result.theta, precision=4)}  "
          f"(epochs {result.epochs_run}, best {result.best_epoch}, "
          f"val loss {result.best_val_loss:.6f})")
    return 0


def cmd_infer(args) -> int:
    start = time.perf_counter()
    ck_path = _require_file(args.checkpoint, "checkpoint")
    try:
        ck = json.loads(ck_path.read_text(encoding="utf-8"))
        state = ModelState.from_dict(ck["state"])
        cfg = FitConfig.from_dict(ck.get("config", {}))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IngestionError(f"{ck_path}: not a fit checkpoint ({exc})")
    data = load_csv(_require_file(args.data, "data file"), tau=cfg.tau)
    if data.p != state.theta.size:
        raise IngestionError(f"data has {data.p} Z columns but the checkpoint has "
                             f"{state.theta.size} coefficients")
    resid = cross_fit_residuals(data, args.folds, cfg, time_scale=state.time_scale)
    est = information(resid, data.n)
    intervals = {f"{lv:g}": wald_ci(state.theta, est, lv).tolist() for lv in args.levels}
    doc = {"theta": state.theta.tolist(), **est.to_dict(), "intervals": intervals,
           "folds": args.folds, "levels": list(args.levels)}
    _write_json(Path(args.out), doc)
    _write_manifest("infer", args.out, {"fit": cfg.to_dict(), "folds": args.folds,
                                        "levels": list(args.levels),
                                        "checkpoint": str(ck_path)},
                    cfg.seed, [args.out], start)
    for j, (th, se) in enumerate(zip(state.theta, est.standard_errors)):
        cis = "  ".join(f"{k}: [{ci[j][0]:.4f}, {ci[j][1]:.4f}]" for k, ci in intervals.items())
        print(f"theta{j + 1} = {th:.4f}  se = {se:.4f}  {cis}")
    return 0


def cmd_replicate(args) -> int:
    start = time.perf_counter()
    sim = SimConfig(n=args.n, seed=args.seed)
    cfg = _fit_config(args)
    out = Path(args.out)
    report = replicate(sim, cfg, reps=args.reps, levels=args.levels, mode=args.mode,
                       jobs=args.jobs, folds=args.folds, checkpoint=args.checkpoint)
    table_path = out.with_suffix(".txt")
    csv_path = out.with_suffix(".csv")
    _write_json(out, report.to_dict())
    _write_text(table_path, report.to_table() + "\n")
    _atomic_write(csv_path, report.to_csv)
    _write_manifest("replicate", out, {"sim": sim.to_dict(), "fit": cfg.to_dict(),
                                       "reps": args.reps, "mode": args.mode,
                                       "folds": args.folds, "levels": list(args.levels),
                                       "jobs": args.jobs},
                    sim.seed, [out, table_path, csv_path], start)
    print(report.to_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexihaz", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from the simulation design")
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=_floats, help="comma-separated true coefficients")
    p.add_argument("--tau", type=float)
    p.add_argument("--censor-rate", type=float)
    p.add_argument("--base-rate", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="train the network and refine theta")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file overriding FitConfig defaults")
    p.add_argument("--grid-size", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="standard errors and Wald intervals for a fitted theta")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--levels", type=_level, nargs="+", default=[0.90, 0.95])
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("replicate", help="Monte Carlo study of estimates and coverage")
    p.add_argument("--reps", type=_positive_int, default=50)
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive_int,
                   default=int(os.environ.get(JOBS_ENV, "1") or 1),
                   help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--config", help="JSON file overriding FitConfig defaults")
    p.add_argument("--grid-size", type=_positive_int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--levels", type=_level, nargs="+", default=[0.90, 0.95])
    p.add_argument("--checkpoint", help="JSON-lines file for resuming finished replications")
    p.add_argument("--out", required=True, help="report JSON; .txt table and .csv log alongside")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FlexiHazError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
