"""Small feedforward Q-network with hand-written backpropagation.

Inputs are one-hot state encodings; the network emits one Q-value per
action. There is no autodiff: :func:`gradient` is checked against central
differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DivergenceError, ParameterError

__all__ = [
    "MlpParams",
    "MlpSpec",
    "SgdState",
    "apply_update",
    "forward",
    "gradient",
    "init_params",
    "load_checkpoint",
    "one_hot",
    "save_checkpoint",
    "sync_target",
]

_ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes. ``hidden_dims=()`` gives a single linear layer."""

    input_dim: int
    hidden_dims: tuple = (64,)
    output_dim: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ParameterError(f"all layer sizes must be >= 1 (got {dims})")
        if self.activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class MlpParams:
    """Per-layer weights ``(fan_in, fan_out)`` and biases ``(fan_out,)``."""

    weights: list
    biases: list

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector):
        """New params with the same shapes filled from ``vector``."""
        vector = np.asarray(vector, dtype=float)
        if vector.size != self.n_params:
            raise ParameterError(f"expected {self.n_params} values, got {vector.size}")
        out, pos = [], 0
        for a in self.arrays():
            out.append(vector[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return MlpParams(out[0::2], out[1::2])

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class SgdState:
    """Momentum buffers for :func:`apply_update`."""

    momentum: float = 0.9
    velocity: MlpParams | None = None
    steps: int = 0


def one_hot(index, size):
    x = np.zeros((np.size(index), size))
    x[np.arange(np.size(index)), np.ravel(index)] = 1.0
    return x if np.ndim(index) else x[0]


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_cache(params, x):
    activations = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        activations.append(h)
    return activations


def forward(params, state_input):
    """Q-values for one input vector or a batch of row vectors."""
    x = np.asarray(state_input, dtype=float)
    fan_in = params.weights[0].shape[0]
    if x.shape[-1] != fan_in or x.ndim > 2:
        raise ParameterError(f"input has shape {x.shape}, network expects last dim {fan_in}")
    return _forward_cache(params, x)[-1]


def gradient(params, state_input, action, target, weight=None):
    """Gradient of ``0.5 * w * (Q(s, a) - target)**2`` with respect to all params.

    Accepts a single input or a batch; for a batch the per-sample terms are
    summed. ``weight`` optionally scales each sample's term.
    """
    x = np.atleast_2d(np.asarray(state_input, dtype=float))
    action = np.atleast_1d(action)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    n_out = params.weights[-1].shape[1]
    if np.any(action < 0) or np.any(action >= n_out):
        raise ParameterError(f"action ids must lie in [0, {n_out})")
    acts = _forward_cache(params, x)
    rows = np.arange(x.shape[0])
    residual = acts[-1][rows, action] - target
    if weight is not None:
        residual = residual * np.atleast_1d(weight)
    delta = np.zeros_like(acts[-1])
    delta[rows, action] = residual
    grads_w, grads_b = [], []
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return MlpParams(grads_w[::-1], grads_b[::-1])


def apply_update(params, grad, state, learning_rate):
    """SGD with heavy-ball momentum, in place; returns ``params``."""
    for g in grad.arrays():
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    if state.velocity is None:
        state.velocity = params.zeros_like()
    for p, v, g in zip(params.arrays(), state.velocity.arrays(), grad.arrays()):
        v *= state.momentum
        v += g
        p -= learning_rate * v
    state.steps += 1
    return params


def sync_target(online):
    """Independent copy of the online parameters."""
    return online.copy()


def save_checkpoint(params, spec, path):
    doc = {
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_dims": list(spec.hidden_dims),
            "output_dim": spec.output_dim,
            "activation": spec.activation,
        },
        "params": params.flat().tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(params, spec)``; floats round-trip exactly through JSON."""
    doc = json.loads(Path(path).read_text())
    spec = MlpSpec(**doc["spec"])
    template = init_params(spec, 0)
    return template.with_flat(doc["params"]), spec
