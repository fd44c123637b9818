"""Small fully connected networks with hand-written backpropagation, plus Adam."""

from __future__ import annotations

import numpy as np


def orthogonal(shape, gain, rng):
    """Random matrix with orthonormal rows or columns, scaled by ``gain``."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MLP:
    """tanh hidden layers, linear scalar-or-vector output.

    ``params`` is a flat list ``[W0, b0, W1, b1, ...]`` with ``W`` shaped
    ``(fan_in, fan_out)``; inputs are batched row-wise.
    """

    def __init__(self, sizes, rng=None, hidden_gain=np.sqrt(2.0), out_gain=0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        self.sizes = list(sizes)
        self.params = []
        n_layers = len(sizes) - 1
        for i in range(n_layers):
            gain = out_gain if i == n_layers - 1 else hidden_gain
            self.params.append(orthogonal((sizes[i], sizes[i + 1]), gain, rng))
            self.params.append(np.zeros(sizes[i + 1]))

    @property
    def n_layers(self):
        return len(self.params) // 2

    def forward(self, x):
        """Returns the output and the activations needed by ``backward``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, dout):
        """Gradients of a scalar loss w.r.t. ``params`` given ``dL/d(output)``."""
        grads = [None] * len(self.params)
        delta = np.asarray(dout, dtype=float)
        for i in reversed(range(self.n_layers)):
            h_in = acts[i]
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (1.0 - acts[i] ** 2)
        return grads


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place descent step on ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, t, m, v):
        self.t = int(t)
        self.m = [np.array(a, dtype=float) for a in m]
        self.v = [np.array(a, dtype=float) for a in v]
