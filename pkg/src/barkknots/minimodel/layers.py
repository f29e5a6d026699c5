"""Layers with explicit forward/backward passes on ``(N, C, H, W)`` arrays."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, StateError


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a training forward pass")
        cache, self._cache = self._cache, None
        return cache

    def clone(self):
        """Shallow copy sharing parameters but with its own cache."""
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.grads = {}
        other._cache = None
        return other


class Conv2D(Layer):
    """Same-padded stride-1 convolution (cross-correlation)."""

    def __init__(self, c_in, c_out, kernel=3, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.kernel = kernel
        self.pad = kernel // 2
        fan_in = c_in * kernel * kernel
        bound = np.sqrt(3.0 / fan_in)
        self.params["w"] = rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel)).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def _cols(self, xp, h, w):
        k = self.kernel
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
        n, c = xp.shape[:2]
        return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, h * w)

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        wgt = self.params["w"]
        if c != wgt.shape[1]:
            raise DimensionError(f"expected {wgt.shape[1]} input channels, got {c}")
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._cols(xp, h, w)
        out = np.matmul(wgt.reshape(wgt.shape[0], -1), cols)
        out += self.params["b"][None, :, None]
        if train:
            self._cache = (x.shape, xp)
        return out.reshape(n, -1, h, w)

    def backward(self, dout):
        (n, c, h, w), xp = self._pop_cache()
        k, p = self.kernel, self.pad
        wgt = self.params["w"]
        co = wgt.shape[0]
        d = dout.reshape(n, co, h * w)
        cols = self._cols(xp, h, w)
        self.grads["w"] = np.tensordot(d, cols, axes=([0, 2], [0, 2])).reshape(wgt.shape)
        self.grads["b"] = d.sum(axis=(0, 2))
        dcols = np.matmul(wgt.reshape(co, -1).T, d).reshape(n, c, k, k, h, w)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += dcols[:, :, i, j]
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class PReLU(Layer):
    """Rectifier with a learned negative slope per channel."""

    def __init__(self, channels, init=0.25, dtype=np.float64):
        super().__init__()
        self.params["alpha"] = np.full(channels, init, dtype=dtype)

    def forward(self, x, train=False):
        a = self.params["alpha"][None, :, None, None]
        if train:
            self._cache = x
        return np.where(x > 0, x, a * x)

    def backward(self, dout):
        x = self._pop_cache()
        a = self.params["alpha"][None, :, None, None]
        neg = x <= 0
        self.grads["alpha"] = np.sum(np.where(neg, dout * x, 0.0), axis=(0, 2, 3))
        return np.where(neg, a * dout, dout)


class Dropout(Layer):
    """Inverted dropout.  ``frozen`` reuses the previous mask (gradient checks)."""

    def __init__(self, rate=0.1):
        super().__init__()
        self.rate = rate
        self.rng = np.random.default_rng(0)
        self.frozen = False
        self.mask = None

    def forward(self, x, train=False):
        if not train:
            return x
        if self.rate == 0:
            self.mask = None
        elif not (self.frozen and self.mask is not None and self.mask.shape == x.shape):
            keep = self.rng.random(x.shape) >= self.rate
            self.mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._cache = True
        return x if self.mask is None else x * self.mask

    def backward(self, dout):
        self._pop_cache()
        return dout if self.mask is None else dout * self.mask


class MaxPool2(Layer):
    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"spatial dims must be even, got {(h, w)}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        if train:
            self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (n, c, h, w), idx = self._pop_cache()
        blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
        return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x, train=False):
        if train:
            self._cache = True
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dout):
        self._pop_cache()
        n, c, h, w = dout.shape
        return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class ConcatInput(Layer):
    """Appends the network input to the feature channels.

    ``source`` is set by the owning model before each pass; no gradient
    flows back into the input.
    """

    def __init__(self):
        super().__init__()
        self.source = None

    def forward(self, x, train=False):
        if self.source is None or self.source.shape[2:] != x.shape[2:]:
            raise DimensionError("skip source missing or of a different spatial size")
        if train:
            self._cache = x.shape[1]
        return np.concatenate([x, self.source.astype(x.dtype, copy=False)], axis=1)

    def backward(self, dout):
        return dout[:, : self._pop_cache()]
