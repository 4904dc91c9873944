"""Dense ReLU network with hand-written backpropagation and ADAM.

The network maps an input row ``u = (t, x_1, ..., x_d)`` to a scalar::

    g(u) = W_K relu(W_{K-1} relu(... relu(W_0 u + v_0) ...) + v_{K-1}) + v_K

Everything is float64.  ``forward`` accepts a single input vector or a
batch of rows; ``backward`` sums parameter gradients over the batch with
per-row upstream weights, which is what the likelihood and the projection
regressions need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError, TrainingError

MLP_FORMAT = "flexihaz.mlp"
MLP_FORMAT_VERSION = 1


@dataclass
class MlpParams:
    """Weights ``W_l`` (shape ``p_{l+1} x p_l``) and biases ``v_l``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix")
        for ell, (w, v) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or v.shape != (w.shape[0],):
                raise ShapeError(f"layer {ell}: weight {w.shape} vs bias {v.shape}")
            if ell and w.shape[1] != self.weights[ell - 1].shape[0]:
                raise ShapeError(f"layer {ell}: input width {w.shape[1]} does not "
                                 f"match previous output {self.weights[ell - 1].shape[0]}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Interleaved ``[W_0, v_0, W_1, v_1, ...]`` (views, not copies)."""
        out = []
        for w, v in zip(self.weights, self.biases):
            out.extend((w, v))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [v.copy() for v in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(v) for v in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "format": MLP_FORMAT,
            "version": MLP_FORMAT_VERSION,
            "widths": list(self.widths),
            "weights": [{"shape": list(w.shape), "values": w.ravel().tolist()}
                        for w in self.weights],
            "biases": [v.tolist() for v in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpParams":
        if doc.get("format") != MLP_FORMAT:
            raise ConfigurationError(f"not an MLP document: format={doc.get('format')!r}")
        if doc.get("version") != MLP_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported MLP document version {doc.get('version')!r}")
        weights = [np.asarray(w["values"], dtype=float).reshape(w["shape"])
                   for w in doc["weights"]]
        biases = [np.asarray(v, dtype=float).reshape(-1) for v in doc["biases"]]
        params = cls(weights, biases)
        if list(params.widths) != list(doc["widths"]):
            raise ShapeError(f"widths {doc['widths']} inconsistent with stored matrices")
        return params


def architecture(input_dim: int, depth: int, width: int) -> tuple[int, ...]:
    """Widths vector for ``depth`` hidden layers of ``width`` units each."""
    return (input_dim,) + (width,) * depth + (1,)


def init_params(widths: Sequence[int], seed: int) -> MlpParams:
    """He-uniform weights scaled by fan-in, zero biases.

    Weights of layer ``l`` are ``Uniform(-b, b)`` with ``b = sqrt(6 / p_l)``.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigurationError(f"invalid widths {widths}: need >= 2 entries, all >= 1")
    if widths[-1] != 1:
        raise ConfigurationError(f"output width must be 1, got {widths[-1]}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def forward(params: MlpParams, u: np.ndarray) -> tuple[np.ndarray | float, list[np.ndarray]]:
    """Evaluate the network.

    Parameters
    ----------
    params : MlpParams
    u : ndarray of shape ``(p_0,)`` or ``(N, p_0)``

    Returns
    -------
    output : float for a single input, ndarray ``(N,)`` for a batch
    cache : list of layer inputs ``[u, a_1, ..., a_K]``, stored feature-major
        (shape ``(p_l, N)``) and consumed by :func:`backward`.
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    h = u[None, :] if single else u
    if h.ndim != 2 or h.shape[1] != params.widths[0]:
        raise ShapeError(f"input shape {u.shape} does not match input width {params.widths[0]}")
    # Feature-major activations keep the BLAS calls on long contiguous rows.
    h = np.ascontiguousarray(h.T)
    cache = [h]
    last = params.n_layers - 1
    for ell, (w, v) in enumerate(zip(params.weights, params.biases)):
        z = w @ h
        z += v[:, None]
        if ell < last:
            np.maximum(z, 0.0, out=z)
            cache.append(z)
        h = z
    out = h[0]
    return (float(out[0]) if single else out), cache


def backward(params: MlpParams, cache: list[np.ndarray], upstream) -> MlpParams:
    """Gradient of ``sum_r upstream_r * g(u_r)`` with respect to all parameters.

    ``upstream`` is a scalar (single input) or a length-``N`` vector of
    per-row weights matching the batch used in :func:`forward`.
    """
    if len(cache) != params.n_layers:
        raise ShapeError(f"cache has {len(cache)} layers, params have {params.n_layers}")
    n_rows = cache[0].shape[1]
    delta = np.asarray(upstream, dtype=float).reshape(1, -1)
    if delta.shape[1] != n_rows:
        if delta.shape[1] == 1:
            delta = np.full((1, n_rows), delta[0, 0])
        else:
            raise ShapeError(f"upstream has {delta.shape[1]} rows, cache has {n_rows}")
    ones = np.ones(n_rows)
    grad_w = [None] * params.n_layers
    grad_v = [None] * params.n_layers
    for ell in range(params.n_layers - 1, -1, -1):
        a_in = cache[ell]
        if a_in.shape[0] != params.weights[ell].shape[1]:
            raise ShapeError(f"cache layer {ell} width does not match parameters")
        grad_w[ell] = delta @ a_in.T
        grad_v[ell] = delta @ ones
        if ell:
            delta = params.weights[ell].T @ delta
            np.multiply(delta, a_in > 0.0, out=delta)
    return MlpParams(grad_w, grad_v)


def input_jacobian(params: MlpParams, u: np.ndarray) -> np.ndarray:
    """Gradient of ``g`` with respect to a single input vector ``u``."""
    _, cache = forward(params, u)
    delta = params.weights[-1].copy()
    for ell in range(params.n_layers - 1, 0, -1):
        delta = (delta * (cache[ell][:, 0] > 0.0)) @ params.weights[ell - 1]
    return delta[0]


@dataclass
class AdamState:
    """Moment accumulators for the network parameters and the linear coefficients."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    m_theta: np.ndarray
    v_theta: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams, theta: np.ndarray | None = None, **hyper) -> "AdamState":
        theta = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
        arrays = params.arrays()
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays],
                   m_theta=np.zeros_like(theta), v_theta=np.zeros_like(theta), **hyper)


def adam_step(params: MlpParams, theta: np.ndarray, grads: MlpParams, theta_grad: np.ndarray,
              state: AdamState) -> tuple[MlpParams, np.ndarray, AdamState]:
    """One bias-corrected ADAM update of the network parameters and ``theta``.

    Arrays are updated in place and returned.
    """
    garrays = grads.arrays()
    theta_grad = np.asarray(theta_grad, dtype=float)
    if not (all(np.isfinite(g).all() for g in garrays) and np.isfinite(theta_grad).all()):
        raise TrainingError(f"non-finite gradient at ADAM step {state.step_count + 1}")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    step = state.learning_rate / bc1

    def update(p, g, m, v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / bc2) + state.epsilon)

    for p, g, m, v in zip(params.arrays(), garrays, state.m, state.v):
        update(p, g, m, v)
    if theta.size:
        update(theta, theta_grad, state.m_theta, state.v_theta)
    return params, theta, state
