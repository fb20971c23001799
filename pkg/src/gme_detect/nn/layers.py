"""Layers with hand-written forward and backward passes.

Sequence tensors are laid out ``(batch, length, channels)``; dense tensors
``(batch, features)``.  Every layer caches what its backward pass needs
during a forward call and refuses to run backward without it.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        # parameter names that receive L2 weight decay
        self.decay: tuple[str, ...] = ()
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable arrays that belong in a checkpoint."""
        return {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def _saved(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a saved forward pass")
        return self._cache


class Conv1D(Layer):
    """Width-``k`` cross-correlation with ``k - 1`` zeros prepended.

    ``y_t = sum_j x_{t-(k-1)+j} @ w[j] + b``, so for ``k = 2`` the first tap
    sees the previous position and the second the current one; output
    length equals input length.
    """

    kind = "conv1d"

    def __init__(self, c_in: int, c_out: int, k: int = 2):
        super().__init__()
        if k < 1:
            raise ValueError("kernel width must be positive")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.params = {"w": np.zeros((k, c_in, c_out)), "b": np.zeros(c_out)}
        self.decay = ("w",)

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "k": self.k}

    def output_shape(self, shape):
        return (shape[0], self.c_out)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ValueError(f"conv1d expects (N, L, {self.c_in}), got {x.shape}")
        w, b = self.params["w"], self.params["b"]
        length = x.shape[1]
        y = x @ w[self.k - 1]
        for j in range(self.k - 1):
            shift = self.k - 1 - j
            if shift < length:
                y[:, shift:] += x[:, : length - shift] @ w[j]
        y += b
        self._cache = x
        return y

    def backward(self, dy):
        x = self._saved()
        w = self.params["w"]
        length = x.shape[1]
        dw = np.zeros_like(w)
        dx = dy @ w[self.k - 1].T
        dw[self.k - 1] = np.tensordot(x, dy, axes=([0, 1], [0, 1]))
        for j in range(self.k - 1):
            shift = self.k - 1 - j
            if shift < length:
                dw[j] = np.tensordot(x[:, : length - shift], dy[:, shift:], axes=([0, 1], [0, 1]))
                dx[:, : length - shift] += dy[:, shift:] @ w[j].T
        self.grads = {"w": dw, "b": dy.sum(axis=(0, 1))}
        return dx


class BatchNorm(Layer):
    """Per-channel normalization over the batch and length axes."""

    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def config(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps, "momentum": self.momentum}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False):
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            # keep a reference to x only; inference batches can be large
            self._cache = (x, inv, False)
            return (x - self.running_mean) * (inv * gamma) + beta
        if x.shape[0] < 2:
            raise ValueError("batchnorm needs at least 2 samples per batch in training mode")
        count = int(np.prod([x.shape[a] for a in axes]))
        mean = x.mean(axis=axes)
        xc = x - mean
        var = np.mean(xc * xc, axis=axes)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc
        xhat *= inv
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mean
        self.running_var = (1 - m) * self.running_var + m * var * count / max(count - 1, 1)
        self._cache = (xhat, inv, True)
        return xhat * gamma + beta

    def backward(self, dy):
        xhat, inv, batch_stats = self._saved()
        if not batch_stats:
            xhat = (xhat - self.running_mean) * inv
        axes = tuple(range(dy.ndim - 1))
        gamma = self.params["gamma"]
        dgamma = np.sum(dy * xhat, axis=axes)
        dbeta = dy.sum(axis=axes)
        count = dy.size // dy.shape[-1]
        self.grads = {"gamma": dgamma, "beta": dbeta}
        if not batch_stats:
            return dy * (gamma * inv)
        # batch statistics: = gamma * inv * (dy - mean(dy) - xhat * mean(dy * xhat))
        return (gamma * inv) * (dy - dbeta / count - xhat * (dgamma / count))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._saved(), dy, 0.0)


class MaxPool1D(Layer):
    """Non-overlapping width-2 max pooling; an odd trailing element is dropped."""

    kind = "maxpool"

    def output_shape(self, shape):
        return (shape[0] // 2, shape[1])

    def forward(self, x, train=False):
        n, length, c = x.shape
        if length < 2:
            raise ValueError("maxpool needs length >= 2")
        half = length // 2
        pairs = x[:, : 2 * half].reshape(n, half, 2, c)
        second = pairs[:, :, 1] > pairs[:, :, 0]
        self._cache = (second, length)
        return np.where(second, pairs[:, :, 1], pairs[:, :, 0])

    def backward(self, dy):
        second, length = self._saved()
        n, half, c = dy.shape
        dx = np.zeros((n, length, c))
        view = dx[:, : 2 * half].reshape(n, half, 2, c)
        view[:, :, 0] = np.where(second, 0.0, dy)
        view[:, :, 1] = np.where(second, dy, 0.0)
        return dx


class GlobalAvgPool(Layer):
    """Mean over the length axis: ``(N, L, C) -> (N, C)``."""

    kind = "global_pool"

    def output_shape(self, shape):
        return (shape[1],)

    def forward(self, x, train=False):
        if x.shape[1] < 1:
            raise ValueError("global pooling needs length >= 1")
        self._cache = x.shape
        return x.mean(axis=1)

    def backward(self, dy):
        shape = self._saved()
        return np.broadcast_to(dy[:, None, :] / shape[1], shape).copy()


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class SqueezeExcite(Layer):
    """Channel gating: ``s = sigmoid(W2 relu(W1 z + b1) + b2)``, ``z`` the channel means.

    Output channel ``c`` is ``s_c * u[..., c]``; shape is unchanged.
    """

    kind = "se"

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ValueError(f"channels ({channels}) must be divisible by the reduction ratio ({reduction})")
        self.channels, self.reduction = channels, reduction
        hidden = channels // reduction
        self.params = {
            "w1": np.zeros((hidden, channels)),
            "b1": np.zeros(hidden),
            "w2": np.zeros((channels, hidden)),
            "b2": np.zeros(channels),
        }
        self.decay = ("w1", "w2")

    def config(self):
        return {"kind": self.kind, "channels": self.channels, "reduction": self.reduction}

    def forward(self, u, train=False):
        p = self.params
        z = u.mean(axis=1)
        a = z @ p["w1"].T + p["b1"]
        h = np.maximum(a, 0.0)
        s = sigmoid(h @ p["w2"].T + p["b2"])
        self._cache = (u, z, a, h, s)
        return u * s[:, None, :]

    def backward(self, dy):
        u, z, a, h, s = self._saved()
        p = self.params
        ds = np.sum(dy * u, axis=1)
        dpre = ds * s * (1.0 - s)
        dh = dpre @ p["w2"]
        da = np.where(a > 0, dh, 0.0)
        dz = da @ p["w1"]
        self.grads = {
            "w1": da.T @ z,
            "b1": da.sum(axis=0),
            "w2": dpre.T @ h,
            "b2": dpre.sum(axis=0),
        }
        # trunk path plus the squeeze path through the channel means
        return dy * s[:, None, :] + dz[:, None, :] / u.shape[1]


class Dense(Layer):
    """``y = x W^T + b`` with ``W`` of shape ``(out, in)``."""

    kind = "dense"

    def __init__(self, f_in: int, f_out: int):
        super().__init__()
        self.f_in, self.f_out = f_in, f_out
        self.params = {"w": np.zeros((f_out, f_in)), "b": np.zeros(f_out)}
        self.decay = ("w",)

    def config(self):
        return {"kind": self.kind, "f_in": self.f_in, "f_out": self.f_out}

    def output_shape(self, shape):
        return (self.f_out,)

    def forward(self, x, train=False):
        if x.shape[-1] != self.f_in:
            raise ValueError(f"dense expects {self.f_in} input features, got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dy):
        x = self._saved()
        self.grads = {"w": dy.T @ x, "b": dy.sum(axis=0)}
        return dy @ self.params["w"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over the batch.

    Returns ``(loss, probabilities, d loss / d logits)``.
    """
    logits = np.atleast_2d(logits)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    logp = z - log_norm[:, None]
    probs = np.exp(logp)
    loss = -float(np.mean(logp[np.arange(n), targets]))
    grad = probs.copy()
    grad[np.arange(n), targets] -= 1.0
    return loss, probs, grad / n


LAYER_TYPES = {
    cls.kind: cls for cls in (Conv1D, BatchNorm, ReLU, MaxPool1D, GlobalAvgPool, SqueezeExcite, Dense)
}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**cfg)
