"""Shared oracles for the test suite."""

import numpy as np

from bqetr.network import MlpSpec, forward, init_params


def random_network_instance(seed, kink_margin=1e-3):
    """Random (params, input, action, target) away from every ReLU kink.

    Central differences straddling a kink do not estimate the derivative, so
    instances with a hidden pre-activation within ``kink_margin`` of zero are
    redrawn.
    """
    rng = np.random.default_rng(seed)
    while True:
        hidden = tuple(int(h) for h in rng.integers(1, 7, size=rng.integers(0, 3)))
        spec = MlpSpec(int(rng.integers(1, 6)), hidden, int(rng.integers(1, 4)))
        params = init_params(spec, int(rng.integers(2**31)))
        for b in params.biases:
            b[:] = rng.normal(scale=0.5, size=b.shape)
        x = rng.normal(size=spec.input_dim)
        h, ok = x, True
        for w, b in zip(params.weights[:-1], params.biases[:-1]):
            pre = h @ w + b
            ok &= bool(np.all(np.abs(pre) > kink_margin))
            h = np.maximum(pre, 0)
        if ok:
            return params, x, int(rng.integers(spec.output_dim)), float(rng.normal())


def finite_difference_gradient(params, x, action, target, eps=1e-5):
    """Central-difference gradient of ``0.5 * (Q(x)[action] - target)**2``."""
    theta = params.flat()
    g = np.zeros_like(theta)

    def loss(vec):
        return 0.5 * (forward(params.with_flat(vec), x)[action] - target) ** 2

    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        g[i] = (loss(theta + step) - loss(theta - step)) / (2 * eps)
    return g


def relative_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8))
