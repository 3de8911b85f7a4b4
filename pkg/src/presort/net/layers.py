"""Layers with explicit forward/backward passes over NCHW arrays.

Each layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, cin, cout, kernel=3, stride=1, pad=2, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.k, self.stride, self.pad = kernel, stride, pad
        fan_in = cin * kernel * kernel
        self.params["weight"] = kaiming_uniform((cout, cin, kernel, kernel), fan_in, rng, dtype)
        self.params["bias"] = np.zeros(cout, dtype=dtype)

    def out_size(self, d: int) -> int:
        return (d + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, x, train=False, rng=None):
        w, b = self.params["weight"], self.params["bias"]
        n, c, h, wd = x.shape
        k, s, p = self.k, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        ho, wo = self.out_size(h), self.out_size(wd)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
        out = cols @ w.reshape(w.shape[0], -1).T
        out += b
        self._cache = (cols, x.shape, xp.shape, ho, wo)
        return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))

    def backward(self, dout):
        cols, xshape, xpshape, ho, wo = self._cache
        w = self.params["weight"]
        cout, cin, k, _ = w.shape
        s, p = self.stride, self.pad
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
        self.grads["weight"] = (d2.T @ cols).reshape(w.shape)
        self.grads["bias"] = d2.sum(axis=0)
        dcols = (d2 @ w.reshape(cout, -1)).reshape(xshape[0], ho, wo, cin, k, k)
        dxp = np.zeros(xpshape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        g = self.params["weight"][None, :, None, None]
        b = self.params["bias"][None, :, None, None]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            return (x - mean) / np.sqrt(var + self.eps) * g + b
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mom = self.momentum
        self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"]
                                        + mom * mean.ravel()).astype(x.dtype)
        unbiased = var.ravel() * (m / max(m - 1, 1))
        self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"]
                                       + mom * unbiased).astype(x.dtype)
        self._cache = (xhat, inv)
        return xhat * g + b

    def backward(self, dout):
        xhat, inv = self._cache
        g = self.params["weight"][None, :, None, None]
        self.grads["weight"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["bias"] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * g
        return inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool2d(Layer):
    """Non-overlapping max pool; trailing odd rows/columns are dropped."""

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def forward(self, x, train=False, rng=None):
        s = self.size
        n, c, h, w = x.shape
        ho, wo = h // s, w // s
        xc = x[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s)
        flat = xc.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
        idx = flat.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (n, c, h, w), idx = self._cache
        s = self.size
        ho, wo = dout.shape[2], dout.shape[3]
        flat = np.zeros((n, c, ho, wo, s * s), dtype=dout.dtype)
        np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
        blocks = flat.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        dx[:, :, :ho * s, :wo * s] = blocks
        return dx


class Dropout(Layer):
    def __init__(self, p=0.2):
        super().__init__()
        self.p = p

    def forward(self, x, train=False, rng=None):
        if not train or self.p <= 0:
            self._mask = None
            return x
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        self._mask = keep
        return x * keep

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, fan_in, fan_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = kaiming_uniform((fan_out, fan_in), fan_in, rng, dtype)
        self.params["bias"] = np.zeros(fan_out, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = dout.T @ self._x
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"]


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
