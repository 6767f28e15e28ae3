"""Minimal numpy MLP with explicit backprop and an Adam optimizer."""

from __future__ import annotations

import numpy as np

from .artifacts import decode_array, encode_array


class MLP:
    """ReLU hidden layers, linear output.  ``sizes`` lists every layer width."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, dtype=np.float32, out_scale: float = 1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        if rng is None:
            return
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = np.sqrt(2.0 / fan_in) * (out_scale if i == n_layers - 1 else 1.0)
            self.weights.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype))
            self.biases.append(np.zeros(fan_out, dtype=dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray, keep: bool = False):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients for ``params`` (same order) and for the input."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def astype(self, dtype) -> MLP:
        out = MLP(self.sizes)
        out.weights = [w.astype(dtype) for w in self.weights]
        out.biases = [b.astype(dtype) for b in self.biases]
        return out

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [encode_array(w) for w in self.weights],
            "biases": [encode_array(b) for b in self.biases],
        }

    @classmethod
    def from_json(cls, d: dict) -> MLP:
        out = cls(d["sizes"])
        out.weights = [decode_array(w) for w in d["weights"]]
        out.biases = [decode_array(b) for b in d["biases"]]
        for w, (fi, fo) in zip(out.weights, zip(out.sizes[:-1], out.sizes[1:])):
            if w.shape != (fi, fo):
                raise ValueError(f"weight shape {w.shape} does not match sizes {out.sizes}")
        return out


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
