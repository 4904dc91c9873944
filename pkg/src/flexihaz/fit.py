"""Estimation pipeline: Cox warm start, ADAM training with early stopping,
and Newton refinement of ``theta`` with the network frozen."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import ExpandedRows, SurvivalData, TimeGrid, build_grid, expand
from .errors import ConfigurationError, EstimationError, InferenceError
from .likelihood import (ModelState, g_values, neg_loglik, row_weights, theta_hessian_offset,
                         theta_loss, theta_score, _check_chi)
from .nn import AdamState, adam_step, architecture, backward, forward, init_params

log = logging.getLogger(__name__)

MAX_SPLIT_ATTEMPTS = 10
SIEVE_WARN = 50.0


@dataclass
class FitConfig:
    depth: int = 5
    width: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 100_000
    patience: int = 35
    val_fraction: float = 0.33
    grid_size: int | None = None
    max_epochs: int = 1000
    seed: int = 0
    tau: float | None = None
    time_scale: float | None = None

    def __post_init__(self):
        for name in ("depth", "width", "batch_size", "patience"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.grid_size is not None and int(self.grid_size) < 1:
            raise ConfigurationError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.time_scale is not None and not self.time_scale > 0:
            raise ConfigurationError(f"time_scale must be positive, got {self.time_scale}")

    def resolved_grid_size(self, n: int) -> int:
        return int(self.grid_size) if self.grid_size is not None else min(n, 512)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown FitConfig key(s): {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "FitConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FitResult:
    """Outcome of :func:`train`.

    ``trained_state`` is the best-validation snapshot; ``state`` holds the
    same network with ``theta`` refined on the full data.
    """

    state: ModelState
    trained_state: ModelState
    train_history: list[dict]
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    theta_initial: np.ndarray
    refine_iterations: int
    grid: TimeGrid
    val_index: np.ndarray = field(repr=False)

    @property
    def theta(self) -> np.ndarray:
        return self.state.theta

    def to_dict(self) -> dict:
        return {
            "state": self.state.to_dict(),
            "trained_state": self.trained_state.to_dict(),
            "theta": self.state.theta.tolist(),
            "theta_initial": self.theta_initial.tolist(),
            "train_history": self.train_history,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "refine_iterations": self.refine_iterations,
            "grid": {"tau": self.grid.tau, "m": self.grid.m},
            "val_index": self.val_index.tolist(),
        }


# ---------------------------------------------------------------------------
# Cox partial likelihood (Breslow ties), used only as a warm start for theta


def _cox_terms(beta, w, time, event, order, tie_end):
    eta = w @ beta
    eta = eta - eta.max()
    r = np.exp(eta)[order]
    ws = w[order]
    s0 = np.cumsum(r)[tie_end]
    s1 = np.cumsum(r[:, None] * ws, axis=0)[tie_end]
    s2 = np.cumsum(r[:, None, None] * ws[:, :, None] * ws[:, None, :], axis=0)[tie_end]
    ev = event[order] == 1
    s0, s1, s2 = s0[ev], s1[ev], s2[ev]
    mean = s1 / s0[:, None]
    loglik = float(eta[order][ev].sum() - np.log(s0).sum())
    score = ws[ev].sum(axis=0) - mean.sum(axis=0)
    info = (s2 / s0[:, None, None]).sum(axis=0) - mean.T @ mean
    return loglik, score, 0.5 * (info + info.T)


def cox_fit(data: SurvivalData, max_iter: int = 50, tol: float = 1e-8,
            return_iterations: bool = False):
    """Maximize the Cox log partial likelihood in ``(X, Z)`` by Newton-Raphson.

    Returns the coefficient vector of length ``d + p`` (X block first).
    """
    if data.n_events == 0:
        raise EstimationError("Cox initializer: no events in data")
    w = np.column_stack([data.x, data.z])
    if (np.ptp(w, axis=0) == 0).any():
        raise EstimationError("Cox initializer: constant covariate column; remove it")
    order = np.argsort(-data.time, kind="stable")
    neg_t = -data.time[order]
    # Breslow risk sets include every tie, so cumulate through the last tie.
    tie_end = np.searchsorted(neg_t, neg_t, side="right") - 1
    event = data.event
    beta = np.zeros(w.shape[1])
    loglik, score, info = _cox_terms(beta, w, data.time, event, order, tie_end)
    for it in range(1, max_iter + 1):
        if np.linalg.cond(info) > 1e12:
            raise EstimationError("Cox initializer: singular information matrix; "
                                  "check for collinear covariates")
        step = np.linalg.solve(info, score)
        for _ in range(60):
            cand = beta + step
            new = _cox_terms(cand, w, data.time, event, order, tie_end)
            if new[0] >= loglik - 1e-12 * abs(loglik):
                break
            step = step / 2
        else:
            raise EstimationError("Cox initializer: step-halving failed")
        beta = cand
        loglik, score, info = new
        if np.linalg.norm(score) < tol:
            return (beta, it) if return_iterations else beta
    raise EstimationError(f"Cox initializer: no convergence in {max_iter} iterations "
                          f"(|score|={np.linalg.norm(score):.3g}); coefficients may diverge")


# ---------------------------------------------------------------------------
# theta refinement with g frozen


def newton_theta(theta0, offset, rows: ExpandedRows, z: np.ndarray, tol: float = 1e-10,
                 max_iter: int = 100) -> tuple[np.ndarray, int]:
    """Minimize the loss over ``theta`` with the network contribution fixed at ``offset``.

    Newton steps with step-halving; falls back to gradient descent with
    backtracking when the Hessian is numerically singular.  Returns the
    minimizer and the number of iterations taken.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    loss = theta_loss(theta, offset, rows, z)
    for it in range(max_iter + 1):
        grad = theta_score(theta, offset, rows, z)
        if np.linalg.norm(grad) < tol:
            return theta, it
        if it == max_iter:
            break
        hess = theta_hessian_offset(theta, offset, rows, z)
        try:
            if np.linalg.cond(hess) > 1e12:
                raise np.linalg.LinAlgError
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return _gradient_descent(theta, loss, offset, rows, z, tol)
        if np.linalg.norm(step) < 1e-13 * (1.0 + np.linalg.norm(theta)):
            # Newton step below rounding resolution: the gradient is at its floor.
            return theta, it
        # predicted decrease g'H^{-1}g / 2 below the loss's rounding resolution
        at_floor = -0.5 * float(grad @ step) < 1e-13 * (1.0 + abs(loss))
        for _ in range(60):
            cand = theta + step
            cand_loss = theta_loss(cand, offset, rows, z)
            if cand_loss <= loss:
                break
            if at_floor:
                return theta, it
            step = step / 2
        else:
            return theta, it
        theta, loss = cand, cand_loss
    log.warning("theta refinement stopped at %d iterations (|grad|=%.3g)", max_iter,
                np.linalg.norm(grad))
    return theta, max_iter


def _gradient_descent(theta, loss, offset, rows, z, tol, max_steps=1000):
    lr = 1.0
    grad = theta_score(theta, offset, rows, z)
    for it in range(max_steps):
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            return theta, it
        while lr > 1e-16:
            cand = theta - lr * grad
            cand_loss = theta_loss(cand, offset, rows, z)
            cand_grad = theta_score(cand, offset, rows, z)
            # Near the optimum loss decreases vanish below rounding; the
            # gradient norm still orders iterates of this convex problem.
            if (cand_loss <= loss - 0.5 * lr * gnorm ** 2
                    or (cand_loss <= loss and np.linalg.norm(cand_grad) < gnorm)):
                break
            lr /= 2
        else:
            if gnorm < 1e-6:
                log.warning("gradient-descent fallback stopped at |grad|=%.3g", gnorm)
                return theta, it
            raise InferenceError("theta Hessian singular and gradient descent cannot progress")
        theta, loss, grad = cand, cand_loss, cand_grad
        lr *= 2
    if np.linalg.norm(grad) < 1e-6:
        log.warning("gradient-descent fallback stopped at |grad|=%.3g", np.linalg.norm(grad))
        return theta, max_steps
    raise InferenceError("theta Hessian singular; gradient-descent fallback did not converge")


def refine_theta(state: ModelState, rows: ExpandedRows, data: SurvivalData,
                 return_iterations: bool = False):
    """Re-maximize the likelihood in ``theta`` holding the network fixed."""
    offset = g_values(state, rows, data)
    theta, it = newton_theta(state.theta, offset, rows, data.z)
    refined = ModelState(state.g_params, theta, state.time_scale)
    return (refined, it) if return_iterations else refined


# ---------------------------------------------------------------------------
# training


def split_subjects(data: SurvivalData, val_fraction: float, seed: int):
    """Subject-level train/validation split with events on both sides."""
    n_val = int(round(val_fraction * data.n))
    if not 0 < n_val < data.n:
        raise EstimationError(f"cannot split {data.n} subjects with val_fraction={val_fraction}")
    for attempt in range(MAX_SPLIT_ATTEMPTS):
        perm = np.random.default_rng([seed, attempt]).permutation(data.n)
        val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        if data.event[val].any() and data.event[tr].any():
            return tr, val
    raise EstimationError(f"no split with events on both sides after {MAX_SPLIT_ATTEMPTS} attempts")


def _constant_log_hazard(rows: ExpandedRows, data: SurvivalData, theta) -> float:
    """Best constant ``g`` given ``theta``: log(events / sum exposure * exp(theta'z))."""
    events = rows.delta.sum()
    at_risk = rows.exposure @ np.exp(data.z[rows.subject] @ theta)
    if events == 0 or at_risk <= 0:
        return 0.0
    return float(np.log(events / at_risk))


def train(data: SurvivalData, config: FitConfig | None = None, refine: bool = True) -> FitResult:
    """Fit the network and ``theta`` by mini-batch ADAM with validation early stopping."""
    config = config or FitConfig()
    tau = float(config.tau) if config.tau is not None else float(data.time.max())
    grid = build_grid(data, config.resolved_grid_size(data.n), tau)
    tr_idx, val_idx = split_subjects(data, config.val_fraction, config.seed)
    train_data, val_data = data.subset(tr_idx), data.subset(val_idx)
    train_rows, val_rows = expand(train_data, grid), expand(val_data, grid)

    theta0 = cox_fit(train_data)[data.d:]
    params = init_params(architecture(1 + data.d, config.depth, config.width), config.seed)
    params.biases[-1][0] = _constant_log_hazard(train_rows, train_data, theta0)
    time_scale = float(config.time_scale) if config.time_scale is not None else tau
    state = ModelState(params, theta0.copy(), time_scale=time_scale)

    best = state.copy()
    best_val = neg_loglik(state, val_rows, val_data).neg_loglik
    best_epoch = 0
    history = [{"epoch": 0, "train_loss": None, "val_loss": best_val}]

    inputs = train_rows.network_input(train_data, time_scale)
    lin_z = train_data.z[train_rows.subject]
    n_rows = len(train_rows)
    batch = min(int(config.batch_size), n_rows)
    scale = n_rows / (batch * train_data.n)
    adam = AdamState.zeros(params, state.theta, learning_rate=config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])

    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_rows)
        running = 0.0
        for lo in range(0, n_rows - batch + 1, batch):
            idx = perm[lo:lo + batch]
            g, cache = forward(state.g_params, inputs[idx])
            chi = g + lin_z[idx] @ state.theta
            _check_chi(chi, train_rows.take(idx))
            e = train_rows.exposure[idx] * np.exp(chi)
            d = train_rows.delta[idx]
            running += float(e.sum() - d @ chi) * scale
            w = (e - d) * scale
            grads = backward(state.g_params, cache, w)
            adam_step(state.g_params, state.theta, grads, w @ lin_z[idx], adam)
        n_batches = n_rows // batch
        val = neg_loglik(state, val_rows, val_data)
        history.append({"epoch": epoch, "train_loss": running / n_batches,
                        "val_loss": val.neg_loglik})
        if val.max_abs_g > SIEVE_WARN:
            log.warning("epoch %d: max |g| = %.1f exceeds monitor bound %.0f",
                        epoch, val.max_abs_g, SIEVE_WARN)
        if val.neg_loglik < best_val:
            best_val, best_epoch, best = val.neg_loglik, epoch, state.copy()
        elif epoch - best_epoch >= config.patience:
            break
    log.debug("training stopped after %d epochs, best epoch %d", epoch, best_epoch)

    refined, iterations = best, 0
    if refine:
        refined, iterations = refine_theta(best, expand(data, grid), data, return_iterations=True)
    return FitResult(state=refined, trained_state=best, train_history=history,
                     epochs_run=epoch, best_epoch=best_epoch, best_val_loss=best_val,
                     theta_initial=theta0, refine_iterations=iterations, grid=grid,
                     val_index=val_idx)
