"""Acceptance criteria 1-8, one test each, each printing a PASS/FAIL line.

Criterion 5 (50 full-pipeline replications at n=2000) takes hours on one
core.  It reads the report stored in ``results/acceptance5.json``, produced
by ``flexihaz replicate`` with the settings below; set
``FLEXIHAZ_RECOMPUTE=1`` to regenerate it (finished replications are
resumed from ``results/acceptance5.jsonl``).
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from flexihaz.data import SurvivalData, TimeGrid, expand
from flexihaz.fit import FitConfig, cox_fit, train
from flexihaz.likelihood import ModelState, loglik_with_mesh, loss_gradients, neg_loglik, theta_hessian
from flexihaz.nn import MlpParams
from flexihaz.simstudy import ReplicationReport, replicate
from flexihaz.simulate import (SimConfig, conditional_cdf, cumulative_hazard, sample_event_time,
                               simulate)

from oracles import (extended_gradients, extended_theta_hessian, gradient_mismatch,
                     random_instance)

RESULTS = Path(__file__).resolve().parent.parent / "results"
RECOMPUTE = os.environ.get("FLEXIHAZ_RECOMPUTE") == "1"

STUDY_SIM = SimConfig(n=2000, seed=2026)
# architecture chosen by validation loss on independent simulated datasets
STUDY_FIT = FitConfig(grid_size=512, depth=3, learning_rate=5e-3)
STUDY_REPS = 50


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        state, data, rows = random_instance(seed)
        grads, tgrad = loss_gradients(state, rows, data)
        reference = extended_gradients(state, data, rows)
        for ga, num in zip(list(grads.arrays()) + [tgrad], reference):
            worst = max(worst, gradient_mismatch(ga, num))
        worst = max(worst, gradient_mismatch(theta_hessian(state, rows, data),
                                             extended_theta_hessian(state, data, rows)))
    seconds = time.perf_counter() - start
    ok = worst < 1 and seconds < 60
    verdict(1, "gradient suite", ok,
            f"100 instances vs 80-bit central differences, worst error / tolerance = "
            f"{worst:.3g}, {seconds:.1f}s")
    assert ok


def test_criterion_2_expansion(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    tau, n = 5.0, 1000
    data = SurvivalData(np.minimum(rng.exponential(2.0, n), tau), rng.integers(0, 2, n),
                        rng.normal(size=(n, 1)), rng.normal(size=(n, 1)))
    worst_exposure, placement_ok, refine_gap = 0.0, True, 0.0
    for _ in range(20):
        pts = rng.uniform(0, tau, rng.integers(1, 200))
        grid = TimeGrid(np.unique(np.concatenate([[0.0, tau], pts])))
        rows = expand(data, grid)
        total = np.bincount(rows.subject, weights=rows.exposure, minlength=n)
        worst_exposure = max(worst_exposure, np.abs(total - np.minimum(data.time, tau)).max())
        events = np.bincount(rows.subject, weights=rows.delta, minlength=n)
        b = grid.breakpoints
        hit = rows.delta == 1
        t = data.time[rows.subject[hit]]
        placement_ok &= bool(np.array_equal(events, data.event)
                             and np.all((b[rows.j[hit] - 1] < t) & (t <= b[rows.j[hit]])))
        finer = TimeGrid(np.unique(np.concatenate([b, rng.uniform(0, tau, 50)])))
        rows_f = expand(data, finer)
        total_f = np.bincount(rows_f.subject, weights=rows_f.exposure, minlength=n)
        refine_gap = max(refine_gap, np.abs(total_f - total).max())
        placement_ok &= bool(np.array_equal(
            np.bincount(rows_f.subject, weights=rows_f.delta, minlength=n), events))
    seconds = time.perf_counter() - start
    ok = worst_exposure <= 1e-12 and placement_ok and refine_gap <= 1e-12 and seconds < 60
    verdict(2, "expansion suite", ok,
            f"max exposure error {worst_exposure:.2e}, refinement gap {refine_gap:.2e}, "
            f"event placement {'ok' if placement_ok else 'BROKEN'}, {seconds:.1f}s")
    assert ok


def test_criterion_3_quadrature(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 200
    # times on multiples of 1/16 sit on every mesh, so refining halves every interval
    data = SurvivalData(rng.integers(1, 17, n) / 16, rng.integers(0, 2, n), np.zeros((n, 1)),
                        np.zeros((n, 1)))
    # one hidden unit: relu(t) = t on [0, 1]
    net = MlpParams([np.array([[1.0, 0.0]]), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    state = ModelState(net, [0.0])
    exact = np.mean(data.event * data.time - np.expm1(data.time))
    sizes = np.array([16, 32, 64, 128, 256])
    errors = np.array([abs(loglik_with_mesh(state, data, m, 1.0) - exact) for m in sizes])
    slope = np.polyfit(np.log(sizes), np.log(errors), 1)[0]
    seconds = time.perf_counter() - start
    ok = slope <= -0.8 and seconds < 60
    verdict(3, "quadrature convergence", ok,
            f"log-log slope {slope:.3f} (errors {errors[0]:.2e} -> {errors[-1]:.2e}), "
            f"{seconds:.1f}s")
    assert ok


def test_criterion_4_simulator(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    n = 100_000
    theta = (2.0, -1.0)
    x, z = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 2))
    u = 1.0 - rng.random(n)
    t = sample_event_time(x, z, theta, u)
    round_trip = np.max(np.abs(cumulative_hazard(t, x, z, theta) + np.log(u)))
    x0, z0 = np.array([0.3, -0.6, 0.8]), np.array([0.2, 0.5])
    t0 = sample_event_time(x0, z0, theta, 1.0 - rng.random(n))
    ks = stats.kstest(t0, lambda s: conditional_cdf(s, x0, z0, theta)).statistic
    censored = 1 - simulate(SimConfig(n=10_000, seed=4)).event.mean()
    seconds = time.perf_counter() - start
    ok = round_trip < 1e-10 and ks < 1.36 / np.sqrt(n) and 0.25 <= censored <= 0.35
    ok &= seconds < 120
    verdict(4, "simulator fidelity", ok,
            f"round trip {round_trip:.2e}, KS {ks:.5f} < {1.36 / np.sqrt(n):.5f}, "
            f"censoring {censored:.3f}, {seconds:.1f}s")
    assert ok


def study_report() -> ReplicationReport:
    path = RESULTS / "acceptance5.json"
    if RECOMPUTE or not path.exists():
        RESULTS.mkdir(exist_ok=True)
        report = replicate(STUDY_SIM, STUDY_FIT, reps=STUDY_REPS,
                           jobs=int(os.environ.get("FLEXIHAZ_THREADS", "1")),
                           checkpoint=RESULTS / "acceptance5.jsonl")
        path.write_text(json.dumps(report.to_dict(), indent=2))
    report = ReplicationReport.from_dict(json.loads(path.read_text()))
    cfg = report.config
    assert cfg["sim"] == STUDY_SIM.to_dict() and cfg["fit"] == STUDY_FIT.to_dict()
    assert cfg["reps"] == STUDY_REPS
    return report


def test_criterion_5_replication(verdict):
    report = study_report()
    est, sd, se = report.mean_estimate, report.empirical_sd, report.mean_se
    cov90, cov95 = report.coverage(0.90), report.coverage(0.95)
    ratio = se / sd
    checks = {
        "mean theta1 in [1.95, 2.05]": 1.95 <= est[0] <= 2.05,
        "mean theta2 in [-1.04, -0.96]": -1.04 <= est[1] <= -0.96,
        "95% coverage >= 0.85": bool(np.all(cov95 >= 0.85)),
        "90% coverage >= 0.78": bool(np.all(cov90 >= 0.78)),
        "SE/SD in [0.7, 1.4]": bool(np.all((ratio >= 0.7) & (ratio <= 1.4))),
    }
    ok = all(checks.values()) and report.n_reps + report.n_failed == STUDY_REPS
    failed = [k for k, v in checks.items() if not v]
    verdict(5, "desk-scale replication", ok,
            f"{report.n_reps} reps ({report.n_failed} failed); est {np.round(est, 3).tolist()}, "
            f"emp SD {np.round(sd, 3).tolist()}, est SE {np.round(se, 3).tolist()}, "
            f"90% {np.round(cov90, 2).tolist()}, 95% {np.round(cov95, 2).tolist()}"
            + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


def test_criterion_6_oracle_coverage(verdict):
    start = time.perf_counter()
    report = replicate(SimConfig(n=1000, seed=6), FitConfig(), reps=100, mode="oracle")
    cov95 = report.coverage(0.95)
    seconds = time.perf_counter() - start
    ok = bool(np.all((cov95 >= 0.90) & (cov95 <= 0.99))) and seconds < 600
    verdict(6, "oracle-nuisance coverage", ok,
            f"95% coverage {cov95.tolist()}, mean est {np.round(report.mean_estimate, 3).tolist()}, "
            f"{seconds:.0f}s")
    assert ok


def test_criterion_7_grid_insensitivity(verdict):
    data = simulate(SimConfig(n=2000, seed=7))
    coarse = train(data, FitConfig(grid_size=64))
    fine = train(data, FitConfig(grid_size=512))
    diff = np.abs(coarse.theta - fine.theta)
    ok = bool(np.all(diff < 0.05))
    verdict(7, "grid insensitivity", ok,
            f"theta(64) {np.round(coarse.theta, 4).tolist()}, "
            f"theta(512) {np.round(fine.theta, 4).tolist()}, max diff {diff.max():.4f}")
    assert ok


def test_criterion_8_cox_recovery(verdict):
    beta = np.array([0.5, 1.0, -0.7])
    estimates, iterations = [], []
    for seed in range(20):
        rng = np.random.default_rng(800 + seed)
        w = rng.normal(size=(2000, 3))
        u = rng.exponential(size=2000) / np.exp(w @ beta)
        c = rng.exponential(1 / 0.3, size=2000)
        data = SurvivalData(np.minimum(u, c), (u <= c).astype(int), w[:, :1], w[:, 1:])
        b, it = cox_fit(data, return_iterations=True)
        estimates.append(b)
        iterations.append(it)
    estimates = np.array(estimates)
    mc_se = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
    dev = np.abs(estimates.mean(axis=0) - beta) / mc_se
    ok = bool(np.all(dev < 3)) and max(iterations) <= 20
    verdict(8, "Cox initializer recovery", ok,
            f"|mean - truth| / MC SE = {np.round(dev, 2).tolist()}, "
            f"max iterations {max(iterations)}")
    assert ok
