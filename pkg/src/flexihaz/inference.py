"""Standard errors for ``theta`` from cross-fitted projection networks.

The efficient information is ``E[Delta (Z - g*(T, X))(Z - g*(T, X))']``
where ``g*`` is the regression of ``Z`` on ``(T, X)`` among uncensored
subjects.  Each coordinate of ``g*`` gets its own network, trained with
K-fold cross-fitting so no subject is predicted by a model that saw it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtri

from .data import SurvivalData
from .errors import InferenceError
from .fit import FitConfig
from .nn import AdamState, MlpParams, adam_step, architecture, backward, forward, init_params

MAX_CONDITION = 1e12


@dataclass
class InformationEstimate:
    info: np.ndarray
    info_inverse: np.ndarray
    standard_errors: np.ndarray
    n_effective: int
    n: int
    condition_number: float

    def to_dict(self) -> dict:
        return {"info": self.info.tolist(), "info_inverse": self.info_inverse.tolist(),
                "standard_errors": self.standard_errors.tolist(),
                "n_effective": self.n_effective, "n": self.n,
                "condition_number": self.condition_number}


@dataclass
class ProjectionModel:
    """Per-fold, per-coordinate regressors and the fold label of every subject."""

    params: list[list[MlpParams]]
    folds: np.ndarray
    time_scale: float

    @property
    def n_folds(self) -> int:
        return len(self.params)


def _mse_step_data(params, inputs, target):
    pred, cache = forward(params, inputs)
    resid = pred - target
    return float(resid @ resid) / target.size, cache, resid


def fit_projection(inputs: np.ndarray, target: np.ndarray, config: FitConfig | None = None,
                   seed: int | None = None) -> MlpParams:
    """Least-squares network regression of ``target`` on ``inputs``.

    ``inputs`` are rows ``(T, X)`` of uncensored subjects (time already
    rescaled).  Architecture, learning rate, batch size and patience come
    from ``config``; a ``val_fraction`` slice is held out for early stopping.
    """
    config = config or FitConfig()
    seed = config.seed if seed is None else seed
    inputs = np.asarray(inputs, dtype=float)
    target = np.asarray(target, dtype=float).reshape(-1)
    n = target.size
    if n == 0:
        raise InferenceError("projection fit needs at least one uncensored subject")
    rng = np.random.default_rng([seed, 2])
    params = init_params(architecture(inputs.shape[1], config.depth, config.width), seed)
    n_val = int(round(config.val_fraction * n))
    if n < 3 or n_val == 0 or n_val == n:
        tr, val = np.arange(n), np.arange(n)
    else:
        perm = rng.permutation(n)
        tr, val = perm[n_val:], perm[:n_val]
    params.biases[-1][0] = target[tr].mean()
    x_tr, y_tr, x_val, y_val = inputs[tr], target[tr], inputs[val], target[val]

    adam = AdamState.zeros(params, learning_rate=config.learning_rate)
    no_theta = np.zeros(0)
    best, best_val, best_epoch = params.copy(), _mse_step_data(params, x_val, y_val)[0], 0
    batch = min(int(config.batch_size), tr.size)
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(tr.size)
        for lo in range(0, tr.size - batch + 1, batch):
            idx = perm[lo:lo + batch]
            _, cache, resid = _mse_step_data(params, x_tr[idx], y_tr[idx])
            grads = backward(params, cache, 2.0 * resid / idx.size)
            adam_step(params, no_theta, grads, no_theta, adam)
        val_loss = _mse_step_data(params, x_val, y_val)[0]
        if val_loss < best_val:
            best, best_val, best_epoch = params.copy(), val_loss, epoch
        elif epoch - best_epoch >= config.patience:
            break
    return best


def assign_folds(n: int, k: int, seed: int) -> np.ndarray:
    """Balanced fold labels ``0..k-1``, a deterministic function of ``(n, k, seed)``."""
    if k < 2 or k > n:
        raise InferenceError(f"need 2 <= folds <= n, got folds={k}, n={n}")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % k
    return folds


def projection_inputs(data: SurvivalData, time_scale: float) -> np.ndarray:
    return np.column_stack([data.time / time_scale, data.x])


def cross_fit_residuals(data: SurvivalData, folds: int = 5, config: FitConfig | None = None,
                        time_scale: float | None = None, return_model: bool = False):
    """Residual matrix with row ``i`` equal to ``sqrt(Delta_i) (Z_i - g*(T_i, X_i))``.

    Censored subjects get zero rows.  Predictions for fold ``k`` come from
    networks trained on uncensored subjects outside fold ``k``.
    """
    config = config or FitConfig()
    if data.n_events == 0:
        raise InferenceError("all subjects censored; projection networks cannot be fitted")
    time_scale = float(time_scale or data.time.max() or 1.0)
    labels = assign_folds(data.n, folds, config.seed)
    inputs = projection_inputs(data, time_scale)
    uncensored = data.event == 1
    resid = np.zeros((data.n, data.p))
    models = []
    for k in range(folds):
        held = labels == k
        train = ~held & uncensored
        if not train.any():
            raise InferenceError(f"fold {k}: no uncensored subjects outside the fold")
        fold_models = []
        for j in range(data.p):
            params = fit_projection(inputs[train], data.z[train, j], config,
                                    seed=config.seed * 7919 + k * 97 + j)
            pred_rows = held & uncensored
            if pred_rows.any():
                pred, _ = forward(params, inputs[pred_rows])
                resid[pred_rows, j] = data.z[pred_rows, j] - pred
            fold_models.append(params)
        models.append(fold_models)
    if return_model:
        return resid, ProjectionModel(models, labels, time_scale)
    return resid


def information(resid: np.ndarray, n: int | None = None) -> InformationEstimate:
    """``I = R'R / n`` with its inverse and per-coordinate standard errors."""
    resid = np.atleast_2d(np.asarray(resid, dtype=float))
    n = resid.shape[0] if n is None else int(n)
    info = resid.T @ resid / n
    info = 0.5 * (info + info.T)
    return information_from_matrix(info, n, int(np.count_nonzero(np.any(resid != 0, axis=1))))


def information_from_matrix(info: np.ndarray, n: int, n_effective: int | None = None
                            ) -> InformationEstimate:
    """Invert a per-subject information matrix (SPD) with a condition-number guard."""
    info = np.atleast_2d(np.asarray(info, dtype=float))
    eig = np.linalg.eigvalsh(info)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    if not cond <= MAX_CONDITION:
        raise InferenceError(f"information matrix is singular (condition number {cond:.3g})")
    factor = linalg.cho_factor(info)
    inverse = linalg.cho_solve(factor, np.eye(info.shape[0]))
    inverse = 0.5 * (inverse + inverse.T)
    se = np.sqrt(np.diag(inverse) / n)
    return InformationEstimate(info, inverse, se, n if n_effective is None else n_effective,
                               n, cond)


def normal_quantile(prob: float) -> float:
    return float(ndtri(prob))


def wald_ci(theta, est: InformationEstimate, level: float = 0.95) -> np.ndarray:
    """``(p, 2)`` array of intervals ``theta_j -/+ z_{(1+level)/2} SE_j``."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    theta = np.asarray(theta, dtype=float)
    half = normal_quantile(0.5 * (1.0 + level)) * est.standard_errors
    return np.column_stack([theta - half, theta + half])


def estimate_information(data: SurvivalData, config: FitConfig | None = None, folds: int = 5,
                         time_scale: float | None = None) -> InformationEstimate:
    """Cross-fitted residuals followed by :func:`information`."""
    resid = cross_fit_residuals(data, folds, config, time_scale)
    return information(resid, data.n)
