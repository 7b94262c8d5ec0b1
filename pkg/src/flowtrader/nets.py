"""Small fully-connected networks with hand-rolled backprop and Adam.

Everything is float64 numpy.  Training is deterministic for a fixed seed
and input order: initialization draws from one generator, updates are
pure array arithmetic, and snapshots copy parameters bitwise.  Hidden
layers use the rectifier; the output layer is identity for regression
heads and an elementwise logistic for bounded action-value heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OUTPUT_KINDS = ("identity", "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Mlp:
    """Dense network: dims[0] inputs through len(dims)-2 hidden layers."""

    dims: list[int]
    output: str
    weights: list[np.ndarray]  # weights[l] has shape (dims[l], dims[l+1])
    biases: list[np.ndarray]

    @classmethod
    def init(cls, dims, seed: int, output: str = "identity") -> "Mlp":
        """Symmetric-uniform fan-in init: U(-1/sqrt(n_in), +1/sqrt(n_in))."""
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d <= 0 for d in dims):
            raise ValueError(f"every layer needs at least one unit, got {dims}")
        if output not in OUTPUT_KINDS:
            raise ValueError(f"output must be one of {OUTPUT_KINDS}, got {output!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(dims=dims, output=output, weights=weights, biases=biases)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(np.asarray(x, dtype=np.float64))
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping the per-layer activations for backprop."""
        single = x.ndim == 1
        h = x[None, :] if single else x
        acts = [h]
        n_layers = len(self.weights)
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if l < n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output == "sigmoid":
                h = _sigmoid(z)
            else:
                h = z
            acts.append(h)
        y = acts[-1][0] if single else acts[-1]
        return y, (acts, single)

    def backward(self, cache, dy: np.ndarray):
        """Backpropagate an output cotangent.

        Returns (weight grads, bias grads, input grad) for the batch the
        cache came from.  The sigmoid head's derivative reuses the cached
        activation: d sigma = y (1 - y).
        """
        acts, single = cache
        delta = np.asarray(dy, dtype=np.float64)
        if single:
            delta = delta[None, :]
        if self.output == "sigmoid":
            y = acts[-1]
            delta = delta * y * (1.0 - y)
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for l in range(len(self.weights) - 1, -1, -1):
            w_grads[l] = acts[l].T @ delta
            b_grads[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l].T) * (acts[l] > 0)
        dx = delta @ self.weights[0].T
        return w_grads, b_grads, dx[0] if single else dx

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "Mlp":
        return Mlp(
            dims=list(self.dims),
            output=self.output,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def mse_loss(net: Mlp, x: np.ndarray, y: np.ndarray, l2_lambda: float = 0.0):
    """Mean squared error over all batch elements plus l2_lambda * sum(W^2).

    Returns (loss, grads) with grads ordered as net.params().  The penalty
    applies to weights only, so its gradient 2 * l2_lambda * W skips biases.
    """
    pred, cache = net.forward_cached(np.asarray(x, dtype=np.float64))
    target = np.asarray(y, dtype=np.float64)
    residual = pred - target
    data_loss = float(np.mean(residual**2))
    dy = 2.0 * residual / residual.size
    w_grads, b_grads, _ = net.backward(cache, dy)
    loss = data_loss
    for l, w in enumerate(net.weights):
        loss += l2_lambda * float(np.sum(w**2))
        w_grads[l] = w_grads[l] + 2.0 * l2_lambda * w
    return loss, w_grads + b_grads


def selected_output_loss(net: Mlp, x: np.ndarray, index: np.ndarray, target: np.ndarray,
                         l2_lambda: float = 0.0):
    """MSE on one selected output unit per row, as value regression needs.

    `index[i]` picks which of row i's outputs is regressed toward
    `target[i]`; the other outputs receive no gradient.
    """
    pred, cache = net.forward_cached(np.asarray(x, dtype=np.float64))
    rows = np.arange(pred.shape[0])
    residual = pred[rows, index] - np.asarray(target, dtype=np.float64)
    data_loss = float(np.mean(residual**2))
    dy = np.zeros_like(pred)
    dy[rows, index] = 2.0 * residual / residual.shape[0]
    w_grads, b_grads, _ = net.backward(cache, dy)
    loss = data_loss
    for l, w in enumerate(net.weights):
        loss += l2_lambda * float(np.sum(w**2))
        w_grads[l] = w_grads[l] + 2.0 * l2_lambda * w
    return loss, w_grads + b_grads


@dataclass
class Adam:
    """Adam with bias correction; state arrays parallel the parameter list."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def hard_sync(dst: Mlp, src: Mlp) -> None:
    """Copy source parameters into the destination network."""
    for d, s in zip(dst.params(), src.params()):
        d[...] = s


def soft_update(dst: Mlp, src: Mlp, tau: float) -> None:
    """Polyak step dst <- tau * src + (1 - tau) * dst, elementwise."""
    for d, s in zip(dst.params(), src.params()):
        d *= 1.0 - tau
        d += tau * s
