"""Monte Carlo replication harness producing bias / SD / SE / coverage tables."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import build_grid, expand
from .errors import EstimationError, FlexiHazError
from .fit import FitConfig, newton_theta, train
from .inference import (cross_fit_residuals, information, information_from_matrix, wald_ci)
from .likelihood import theta_hessian_offset
from .simulate import SimConfig, simulate, true_log_hazard_nuisance

log = logging.getLogger(__name__)

MODES = ("full", "oracle")
MAX_FAILURE_FRACTION = 0.10


def replication_seed(seed: int, rep: int) -> int:
    """Independent stream seed for replication ``rep``."""
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


@dataclass
class ReplicationReport:
    theta_true: np.ndarray
    levels: tuple[float, ...]
    records: list[dict]
    n_failed: int = 0
    failures: list[dict] = field(default_factory=list)
    mode: str = "full"
    config: dict = field(default_factory=dict)

    @property
    def n_reps(self) -> int:
        return len(self.records)

    def _column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    @property
    def estimates(self) -> np.ndarray:
        return self._column("theta").reshape(self.n_reps, -1)

    @property
    def standard_errors(self) -> np.ndarray:
        return self._column("se").reshape(self.n_reps, -1)

    @property
    def mean_estimate(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def empirical_sd(self) -> np.ndarray | None:
        if self.n_reps < 2:
            return None
        return self.estimates.std(axis=0, ddof=1)

    @property
    def mean_se(self) -> np.ndarray:
        return self.standard_errors.mean(axis=0)

    def coverage(self, level: float) -> np.ndarray:
        key = _level_key(level)
        return np.mean([r["covered"][key] for r in self.records], axis=0)

    @property
    def mean_censoring(self) -> float:
        return float(self._column("censoring").mean())

    def to_dict(self) -> dict:
        sd = self.empirical_sd
        return {
            "mode": self.mode,
            "theta_true": self.theta_true.tolist(),
            "levels": list(self.levels),
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "mean_estimate": self.mean_estimate.tolist(),
            "empirical_sd": None if sd is None else sd.tolist(),
            "mean_se": self.mean_se.tolist(),
            "coverage": {_level_key(lv): self.coverage(lv).tolist() for lv in self.levels},
            "mean_censoring": self.mean_censoring,
            "config": self.config,
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReplicationReport":
        return cls(np.asarray(doc["theta_true"], dtype=float), tuple(doc["levels"]),
                   doc["records"], doc.get("n_failed", 0), doc.get("failures", []),
                   doc.get("mode", "full"), doc.get("config", {}))

    def to_table(self) -> str:
        """Plain-text table: Est, Emp SD, Est SE and coverage per level."""
        sd = self.empirical_sd
        head = ["", "Est", "Emp SD", "Est SE"] + [f"{100 * lv:g}%" for lv in self.levels]
        rows = []
        for j in range(self.theta_true.size):
            rows.append([f"theta{j + 1}", f"{self.mean_estimate[j]:.3f}",
                         "-" if sd is None else f"{sd[j]:.3f}", f"{self.mean_se[j]:.3f}"]
                        + [f"{self.coverage(lv)[j]:.3f}" for lv in self.levels])
        widths = [max(len(r[k]) for r in [head] + rows) for k in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
        lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in rows]
        lines.append(f"replications: {self.n_reps} (failed: {self.n_failed}), "
                     f"truth: {self.theta_true.tolist()}, "
                     f"mean censoring: {self.mean_censoring:.3f}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        p = self.theta_true.size
        header = (["rep", "seed"] + [f"theta{j + 1}" for j in range(p)]
                  + [f"se{j + 1}" for j in range(p)]
                  + [f"covered{_level_key(lv)}_{j + 1}" for lv in self.levels for j in range(p)]
                  + ["censoring", "epochs", "seconds"])
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.records:
                w.writerow([r["rep"], r["seed"]] + r["theta"] + r["se"]
                           + [int(c) for lv in self.levels for c in r["covered"][_level_key(lv)]]
                           + [r["censoring"], r.get("epochs", ""), r.get("seconds", "")])


def _level_key(level: float) -> str:
    return f"{level:g}"


def oracle_estimate(data, sim: SimConfig, grid_size: int):
    """Estimate ``theta`` with ``g`` fixed at the true nuisance; SE from the theta Hessian."""
    grid = build_grid(data, grid_size, sim.tau)
    rows = expand(data, grid)
    offset = true_log_hazard_nuisance(rows.eval_time, data.x[rows.subject], sim.base_rate)
    theta, it = newton_theta(np.zeros(data.p), offset, rows, data.z)
    est = information_from_matrix(theta_hessian_offset(theta, offset, rows, data.z), data.n)
    return theta, est, it


def run_replication(sim: SimConfig, fit_config: FitConfig, rep: int,
                    levels: Sequence[float] = (0.90, 0.95), mode: str = "full",
                    folds: int = 5) -> dict:
    """Simulate one dataset and run the requested estimation pipeline on it."""
    seed = replication_seed(sim.seed, rep)
    start = time.perf_counter()
    sim_r = SimConfig(n=sim.n, theta_true=sim.theta_true, tau=sim.tau, base_rate=sim.base_rate,
                      censor_rate=sim.censor_rate, seed=seed)
    data = simulate(sim_r)
    record = {"rep": rep, "seed": seed, "censoring": float(1 - data.event.mean())}
    if mode == "oracle":
        theta, est, it = oracle_estimate(data, sim, fit_config.resolved_grid_size(data.n))
        record.update(epochs=0, refine_iterations=it)
    elif mode == "full":
        cfg = FitConfig(**{**fit_config.to_dict(), "seed": seed % (2 ** 31),
                           "tau": fit_config.tau or sim.tau})
        result = train(data, cfg)
        theta = result.theta
        resid = cross_fit_residuals(data, folds, cfg, time_scale=result.state.time_scale)
        est = information(resid, data.n)
        record.update(epochs=result.epochs_run, best_epoch=result.best_epoch,
                      refine_iterations=result.refine_iterations,
                      theta_trained=result.trained_state.theta.tolist(),
                      theta_initial=result.theta_initial.tolist())
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    truth = np.asarray(sim.theta_true)
    covered = {}
    intervals = {}
    for lv in levels:
        ci = wald_ci(theta, est, lv)
        covered[_level_key(lv)] = [bool(lo <= t <= hi) for (lo, hi), t in zip(ci, truth)]
        intervals[_level_key(lv)] = ci.tolist()
    record.update(theta=theta.tolist(), se=est.standard_errors.tolist(), covered=covered,
                  intervals=intervals, seconds=time.perf_counter() - start)
    return record


def _safe_run(args):
    sim, fit_config, rep, levels, mode, folds = args
    try:
        return run_replication(sim, fit_config, rep, levels, mode, folds)
    except (FlexiHazError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return {"rep": rep, "failed": True, "error": f"{type(exc).__name__}: {exc}"}


def replicate(sim: SimConfig, fit_config: FitConfig | None = None, reps: int = 50,
              levels: Sequence[float] = (0.90, 0.95), mode: str = "full", jobs: int = 1,
              folds: int = 5, checkpoint=None) -> ReplicationReport:
    """Run ``reps`` independent replications and aggregate them.

    Failed replications are excluded and counted; more than 10% failures
    raises :class:`EstimationError`.  With ``checkpoint`` (a JSON-lines
    path) finished replications are appended as they complete and reused
    on a later call with the same arguments.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    fit_config = fit_config or FitConfig()
    levels = tuple(float(lv) for lv in levels)
    done: dict[int, dict] = {}
    if checkpoint is not None and Path(checkpoint).exists():
        with open(checkpoint, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    done[rec["rep"]] = rec
    todo = [r for r in range(reps) if r not in done]
    tasks = [(sim, fit_config, r, levels, mode, folds) for r in todo]

    def collect(rec):
        done[rec["rep"]] = rec
        if checkpoint is not None:
            with open(checkpoint, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        log.info("replication %d: %s", rec["rep"],
                 rec.get("error") or f"theta={np.round(rec['theta'], 4).tolist()}")

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_safe_run, tasks):
                collect(rec)
    else:
        for task in tasks:
            collect(_safe_run(task))

    ordered = [done[r] for r in range(reps)]
    failures = [r for r in ordered if r.get("failed")]
    records = [r for r in ordered if not r.get("failed")]
    report = ReplicationReport(np.asarray(sim.theta_true, dtype=float), levels, records,
                               len(failures), failures, mode,
                               {"sim": sim.to_dict(), "fit": fit_config.to_dict(), "reps": reps,
                                "folds": folds})
    if len(failures) > MAX_FAILURE_FRACTION * reps:
        exc = EstimationError(f"{len(failures)} of {reps} replications failed; first error: "
                              f"{failures[0]['error']}")
        exc.report = report
        raise exc
    if not records:
        raise EstimationError("every replication failed")
    return report
