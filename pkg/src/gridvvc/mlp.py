"""Minimal dense networks with explicit backpropagation.

Everything is plain numpy so gradients can be audited against finite
differences; there is no autograd anywhere in the training stack.
"""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((fan_in, fan_out))
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == (fan_in, fan_out) else vt
    return gain * q


class Mlp:
    """Fully-connected net, tanh hidden activations, linear output head."""

    def __init__(
        self,
        sizes: tuple[int, ...],
        rng: np.random.Generator,
        out_gain: float = 0.01,
    ):
        self.sizes = tuple(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for k in range(len(sizes) - 1):
            gain = out_gain if k == len(sizes) - 2 else np.sqrt(2.0)
            self.weights.append(orthogonal(rng, sizes[k], sizes[k + 1], gain))
            self.biases.append(np.zeros(sizes[k + 1]))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """x: (batch, in). Returns (output, activation cache for backward)."""
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if k == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        """Gradient of a scalar loss wrt every parameter, given dloss/doutput.

        Returns grads in the same order as parameters(): w0, b0, w1, b1, ...
        """
        grads: list[np.ndarray] = [np.empty(0)] * (2 * len(self.weights))
        delta = dout
        for k in range(len(self.weights) - 1, -1, -1):
            h_prev = cache[k]
            grads[2 * k] = h_prev.T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (1.0 - cache[k] ** 2)
        return grads


class Adam:
    """Adaptive-moment optimizer over an explicit list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class RunningNorm:
    """Streaming mean/variance used to normalize observations.

    Stats accumulate while collecting exploration data and are frozen
    before adaptation runs so the input scaling stays fixed.
    """

    def __init__(self, dim: int):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.frozen = False

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        self.count += 1.0
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count < 2:
            return x
        var = self.m2 / self.count
        return np.clip((x - self.mean) / np.sqrt(var + 1e-8), -10.0, 10.0)

    def state(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
            "frozen": self.frozen,
        }

    @classmethod
    def from_state(cls, state: dict) -> "RunningNorm":
        norm = cls(len(state["mean"]))
        norm.count = float(state["count"])
        norm.mean = np.array(state["mean"], dtype=float)
        norm.m2 = np.array(state["m2"], dtype=float)
        norm.frozen = bool(state["frozen"])
        return norm
