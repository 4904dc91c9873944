"""Reference computations kept independent of the code paths they check."""

import numpy as np

from flexihaz.data import SurvivalData, build_grid, expand
from flexihaz.likelihood import ModelState
from flexihaz.nn import MlpParams, init_params


def relu_net(params: MlpParams, u, dtype=np.float64):
    h = np.asarray(u, dtype=dtype)
    for ell, (w, v) in enumerate(zip(params.weights, params.biases)):
        h = w.astype(dtype) @ h + v.astype(dtype)
        if ell < params.n_layers - 1:
            h = np.maximum(h, 0)
    return h[0]


def direct_loglik(params, theta, data: SurvivalData, breakpoints, time_scale=1.0,
                  dtype=np.float64):
    """Double loop over subjects and grid intervals, straight from the sum formula."""
    total = dtype(0)
    b = [dtype(v) for v in breakpoints]
    theta = np.asarray(theta, dtype=dtype)
    for i in range(data.n):
        t_i = dtype(data.time[i])
        lin = data.z[i].astype(dtype) @ theta
        for j in range(1, len(b)):
            if not t_i >= b[j - 1]:  # at-risk indicator Y_i(t_{j-1})
                continue
            chi = relu_net(params, np.concatenate([[b[j] / dtype(time_scale)],
                                                   data.x[i].astype(dtype)]), dtype) + lin
            exposure = min(t_i, b[j]) - b[j - 1]
            event = data.event[i] == 1 and b[j - 1] < t_i <= b[j]
            total += (chi if event else 0) - exposure * np.exp(chi)
    return total / data.n


def central_difference(f, arr, step=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    out = np.zeros(arr.shape)
    for k in np.ndindex(arr.shape):
        old = arr[k]
        arr[k] = old + step
        up = f()
        arr[k] = old - step
        down = f()
        arr[k] = old
        out[k] = (up - down) / (2 * step)
    return out


def gradient_mismatch(analytic, numeric):
    """Largest violation of: relative error < 1e-6, or absolute < 1e-9 for |coord| < 1e-6.

    Returns a value < 1 when every coordinate passes.
    """
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    big = np.abs(numeric) >= 1e-6
    worst = 0.0
    if big.any():
        worst = max(worst, float((np.abs(analytic - numeric)[big] / np.abs(numeric[big])).max()
                                 / 1e-6))
    if (~big).any():
        worst = max(worst, float(np.abs(analytic - numeric)[~big].max() / 1e-9))
    return worst


def random_instance(seed, n=5):
    """Small random ``(state, data, rows)`` for derivative checks."""
    rng = np.random.default_rng(seed)
    d, p = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    depth = int(rng.integers(1, 3))
    widths = (1 + d,) + tuple(int(rng.integers(2, 9)) for _ in range(depth)) + (1,)
    tau = 2.0
    data = SurvivalData(rng.uniform(0.05, tau, n), rng.integers(0, 2, n),
                        rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (n, p)))
    params = init_params(widths, seed)
    for b in params.biases:
        b[:] = rng.normal(scale=0.2, size=b.shape)
    state = ModelState(params, rng.normal(scale=0.5, size=p), time_scale=tau)
    grid = build_grid(data, int(rng.integers(1, 6)), tau)
    return state, data, expand(data, grid)


# Extended-precision references.  Double-precision central differences carry
# rounding noise near eps * |f| / step (about 1e-10 here), too coarse for a
# 1e-6 relative check on small coordinates; 80-bit floats cut it ~2000x.

LD = np.longdouble


def _loss_ld(weights, biases, theta, data: SurvivalData, rows, time_scale):
    """The discretized loss row by row, with every parameter in extended precision."""
    h = np.column_stack([rows.eval_time / time_scale, data.x[rows.subject]]).T.astype(LD)
    for ell, (w, v) in enumerate(zip(weights, biases)):
        h = w @ h + v[:, None]
        if ell < len(weights) - 1:
            h = np.maximum(h, 0)
    chi = h[0] + data.z[rows.subject].astype(LD) @ theta
    return -(rows.delta.astype(LD) @ chi - rows.exposure.astype(LD) @ np.exp(chi)) / LD(data.n)


def _score_ld(weights, biases, theta, data: SurvivalData, rows, time_scale):
    h = np.column_stack([rows.eval_time / time_scale, data.x[rows.subject]]).T.astype(LD)
    for ell, (w, v) in enumerate(zip(weights, biases)):
        h = w @ h + v[:, None]
        if ell < len(weights) - 1:
            h = np.maximum(h, 0)
    z = data.z[rows.subject].astype(LD)
    chi = h[0] + z @ theta
    return -((rows.delta.astype(LD) - rows.exposure.astype(LD) * np.exp(chi)) @ z) / LD(data.n)


def extended_gradients(state, data, rows, step=1e-6):
    """Central differences of the loss w.r.t. every network array and theta, in 80-bit floats.

    Returns a list in ``MlpParams.arrays()`` order followed by the theta block.
    """
    ws = [w.astype(LD) for w in state.g_params.weights]
    bs = [b.astype(LD) for b in state.g_params.biases]
    th = state.theta.astype(LD)
    f = lambda: _loss_ld(ws, bs, th, data, rows, state.time_scale)
    arrays = [a for pair in zip(ws, bs) for a in pair] + [th]
    return [_central_ld(f, a, step) for a in arrays]


def extended_theta_hessian(state, data, rows, step=1e-6):
    """Central differences of the extended-precision theta score."""
    ws = [w.astype(LD) for w in state.g_params.weights]
    bs = [b.astype(LD) for b in state.g_params.biases]
    th = state.theta.astype(LD)
    p = th.size
    out = np.zeros((p, p))
    for k in range(p):
        old = th[k]
        th[k] = old + LD(step)
        up = _score_ld(ws, bs, th, data, rows, state.time_scale)
        th[k] = old - LD(step)
        down = _score_ld(ws, bs, th, data, rows, state.time_scale)
        th[k] = old
        out[:, k] = ((up - down) / (2 * LD(step))).astype(float)
    return out


def _central_ld(f, arr, step):
    out = np.zeros(arr.shape)
    for k in np.ndindex(arr.shape):
        old = arr[k]
        arr[k] = old + LD(step)
        up = f()
        arr[k] = old - LD(step)
        down = f()
        arr[k] = old
        out[k] = float((up - down) / (2 * LD(step)))
    return out
