"""Discretized full log-likelihood of the partially linear hazard model.

For the log-hazard ``chi_ij = g(t_j, X_i) + theta'Z_i`` the loss minimized
throughout the package is

    -(1/n) sum_i sum_j [ delta_ij * chi_ij - exposure_ij * exp(chi_ij) ]

where the inner sum runs over the expanded rows of subject ``i``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import ExpandedRows, SurvivalData, build_grid, expand
from .errors import NumericalError, ShapeError
from .nn import MlpParams, backward, forward

CHI_MAX = 700.0
CHUNK_ROWS = 1 << 16


@dataclass
class ModelState:
    """Network for ``g(t, x)`` plus the linear coefficients ``theta``.

    The network sees time as ``t / time_scale``; this is a fixed rescaling
    of the first input, not a fitted quantity.
    """

    g_params: MlpParams
    theta: np.ndarray
    time_scale: float = 1.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if not np.isfinite(self.theta).all():
            raise NumericalError("theta must be finite")

    @property
    def d(self) -> int:
        return self.g_params.widths[0] - 1

    def copy(self) -> "ModelState":
        return ModelState(self.g_params.copy(), self.theta.copy(), self.time_scale)

    def check_compatible(self, data: SurvivalData) -> None:
        if self.d != data.d or self.theta.size != data.p:
            raise ShapeError(f"model expects d={self.d}, p={self.theta.size}; "
                             f"data has d={data.d}, p={data.p}")

    def g(self, t, x) -> np.ndarray:
        """Network value at times ``t`` (scalar or array) and covariate rows ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        out, _ = forward(self.g_params, np.column_stack([t / self.time_scale, x]))
        return out

    def to_dict(self) -> dict:
        return {"g_params": self.g_params.to_dict(), "theta": self.theta.tolist(),
                "time_scale": self.time_scale}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelState":
        return cls(MlpParams.from_dict(doc["g_params"]), np.asarray(doc["theta"], dtype=float),
                   float(doc.get("time_scale", 1.0)))


@dataclass
class LossReport:
    neg_loglik: float
    event_term: float
    exposure_term: float
    max_abs_g: float

    def to_dict(self) -> dict:
        return asdict(self)


def _chunks(n_rows: int, size: int = CHUNK_ROWS):
    for lo in range(0, n_rows, size):
        yield slice(lo, min(lo + size, n_rows))


def _check_chi(chi: np.ndarray, rows: ExpandedRows, offset: int = 0) -> None:
    bad = np.flatnonzero(~(chi <= CHI_MAX))
    if bad.size:
        r = bad[0]
        raise NumericalError(
            f"log-hazard {chi[r]:.4g} exceeds {CHI_MAX} (or is not finite) at expanded row "
            f"{offset + r} (subject {rows.subject[offset + r]}, interval {rows.j[offset + r]})")


def g_values(state: ModelState, rows: ExpandedRows, data: SurvivalData) -> np.ndarray:
    """Network output ``g(t_j, X_i)`` for every expanded row."""
    out = np.empty(len(rows))
    for sl in _chunks(len(rows)):
        out[sl], _ = forward(state.g_params, rows.network_input(data, state.time_scale, sl))
    return out


def neg_loglik(state: ModelState, rows: ExpandedRows, data: SurvivalData) -> LossReport:
    state.check_compatible(data)
    n = rows.n_subjects
    lin = data.z @ state.theta
    event_term = exposure_term = 0.0
    max_abs_g = 0.0
    for sl in _chunks(len(rows)):
        g, _ = forward(state.g_params, rows.network_input(data, state.time_scale, sl))
        chi = g + lin[rows.subject[sl]]
        _check_chi(chi, rows, sl.start)
        event_term += float(rows.delta[sl] @ chi)
        exposure_term += float(rows.exposure[sl] @ np.exp(chi))
        if g.size:
            max_abs_g = max(max_abs_g, float(np.abs(g).max()))
    return LossReport(-(event_term - exposure_term) / n, event_term / n, exposure_term / n,
                      max_abs_g)


def row_weights(chi: np.ndarray, rows: ExpandedRows, sl=slice(None)) -> np.ndarray:
    """Derivative of the loss with respect to each row's log-hazard."""
    return -(rows.delta[sl] - rows.exposure[sl] * np.exp(chi)) / rows.n_subjects


def loss_gradients(state: ModelState, rows: ExpandedRows,
                   data: SurvivalData) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients of :func:`neg_loglik` in the network parameters and ``theta``."""
    state.check_compatible(data)
    lin = data.z @ state.theta
    grads = state.g_params.zeros_like()
    theta_grad = np.zeros_like(state.theta)
    for sl in _chunks(len(rows)):
        g, cache = forward(state.g_params, rows.network_input(data, state.time_scale, sl))
        chi = g + lin[rows.subject[sl]]
        _check_chi(chi, rows, sl.start)
        w = row_weights(chi, rows, sl)
        for acc, part in zip(grads.arrays(), backward(state.g_params, cache, w).arrays()):
            acc += part
        theta_grad += np.bincount(rows.subject[sl], weights=w, minlength=data.n) @ data.z
    return grads, theta_grad


# Objective in theta alone with g frozen at per-row offsets.  These are the
# building blocks of theta refinement and of the oracle-nuisance study.

def theta_loss(theta, offset, rows: ExpandedRows, z: np.ndarray) -> float:
    chi = offset + z[rows.subject] @ theta
    _check_chi(chi, rows)
    return -float(rows.delta @ chi - rows.exposure @ np.exp(chi)) / rows.n_subjects


def theta_score(theta, offset, rows: ExpandedRows, z: np.ndarray) -> np.ndarray:
    chi = offset + z[rows.subject] @ theta
    _check_chi(chi, rows)
    w = row_weights(chi, rows)
    return np.bincount(rows.subject, weights=w, minlength=z.shape[0]) @ z


def theta_hessian_offset(theta, offset, rows: ExpandedRows, z: np.ndarray) -> np.ndarray:
    chi = offset + z[rows.subject] @ theta
    _check_chi(chi, rows)
    per_subject = np.bincount(rows.subject, weights=rows.exposure * np.exp(chi),
                              minlength=z.shape[0])
    h = (z * per_subject[:, None]).T @ z / rows.n_subjects
    return 0.5 * (h + h.T)


def theta_hessian(state: ModelState, rows: ExpandedRows, data: SurvivalData) -> np.ndarray:
    """Hessian of :func:`neg_loglik` in ``theta``: ``(1/n) sum exposure * exp(chi) * Z Z'``."""
    state.check_compatible(data)
    return theta_hessian_offset(state.theta, g_values(state, rows, data), rows, data.z)


def loglik_with_mesh(state: ModelState, data: SurvivalData, grid_size: int,
                     tau: float) -> float:
    """Discretized log-likelihood (positive sign) on a grid of the given resolution."""
    rows = expand(data, build_grid(data, grid_size, tau))
    return -neg_loglik(state, rows, data).neg_loglik
