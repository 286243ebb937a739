"""Minimal reverse-mode engine for stacks of dense layers.

Parameters live in flat ``dict[str, ndarray]`` so optimizers, serialization
and finite-difference checks can treat every network uniformly.
"""
from __future__ import annotations

import numpy as np

from veil.errors import ConfigurationError

ACTIVATIONS = ("relu", "tanh", "linear")


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ConfigurationError(f"unknown activation {kind!r}")


def activate_grad(z: np.ndarray, out: np.ndarray, grad_out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return grad_out * (z > 0)
    if kind == "tanh":
        return grad_out * (1.0 - out * out)
    return grad_out


def init_dense(rng: np.random.Generator, n_in: int, n_out: int):
    """Fan-in scaled uniform weights, zero bias."""
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_in, n_out))
    return w, np.zeros(n_out)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MLP:
    """Feed-forward stack ``x -> act(xW0+b0) -> ... -> act_last(.)``.

    ``forward`` returns the output and a cache; ``backward`` consumes the cache
    and the gradient w.r.t. the output and returns (grad wrt input, param grads).
    """

    def __init__(self, sizes, activation="relu", out_activation="linear", prefix="mlp", rng=None):
        if len(sizes) < 2:
            raise ConfigurationError("MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.out_activation = out_activation
        self.prefix = prefix
        self.params: dict[str, np.ndarray] = {}
        if rng is not None:
            for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                w, bias = init_dense(rng, a, b)
                self.params[f"{prefix}.{i}.W"] = w
                self.params[f"{prefix}.{i}.b"] = bias

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def layer_activation(self, i: int) -> str:
        return self.out_activation if i == self.n_layers - 1 else self.activation

    def forward(self, x: np.ndarray, params=None):
        p = self.params if params is None else params
        h = x
        cache = []
        for i in range(self.n_layers):
            z = h @ p[f"{self.prefix}.{i}.W"] + p[f"{self.prefix}.{i}.b"]
            out = activate(z, self.layer_activation(i))
            cache.append((h, z, out))
            h = out
        return h, cache

    def backward(self, cache, grad_out: np.ndarray, params=None):
        p = self.params if params is None else params
        grads = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            h, z, out = cache[i]
            g = activate_grad(z, out, g, self.layer_activation(i))
            grads[f"{self.prefix}.{i}.W"] = h.T @ g
            grads[f"{self.prefix}.{i}.b"] = g.sum(axis=0)
            g = g @ p[f"{self.prefix}.{i}.W"].T
        return g, grads


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(grads):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGDMomentum:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.vel: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        for k in sorted(grads):
            v = self.vel.get(k)
            v = -self.lr * grads[k] if v is None else self.momentum * v - self.lr * grads[k]
            self.vel[k] = v
            params[k] = params[k] + v


def make_optimizer(name: str, lr: float):
    if name == "adaptive_moments":
        return Adam(lr=lr)
    if name == "sgd_momentum":
        return SGDMomentum(lr=lr)
    raise ConfigurationError(f"unknown optimizer {name!r}")


def batches(n: int, batch_size: int, rng: np.random.Generator | None):
    idx = np.arange(n) if rng is None else rng.permutation(n)
    for s in range(0, n, batch_size):
        yield idx[s : s + batch_size]
