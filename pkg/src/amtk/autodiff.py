"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for the transcription model: elementwise arithmetic and
nonlinearities, matmul, 3x3 same-padding convolution (im2col), 2x2 max
pooling, nearest-neighbor upsampling, concat/narrow/reshape, reductions and
a fused sigmoid cross-entropy.  Gradients accumulate into `.grad`; call
`backward()` on a scalar node.
"""
from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar node")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise --

    def __add__(self, other):
        other = _wrap(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))
        return Var(self.data + other.data, (self, other), bwd)

    def __mul__(self, other):
        other = _wrap(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))
        return Var(self.data * other.data, (self, other), bwd)

    def __neg__(self):
        return self * (-np.ones((), dtype=self.data.dtype))

    def __sub__(self, other):
        return self + (-_wrap(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __matmul__(self, other):
        other = _wrap(other)

        def bwd(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))
        return Var(self.data @ other.data, (self, other), bwd)

    # -- nonlinearities --

    def relu(self):
        mask = self.data > 0

        def bwd(g):
            self._accumulate(g * mask)
        return Var(self.data * mask, (self,), bwd)

    def sigmoid(self):
        out = _sigmoid(self.data)

        def bwd(g):
            self._accumulate(g * out * (1.0 - out))
        return Var(out, (self,), bwd)

    def tanh(self):
        out = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - out * out))
        return Var(out, (self,), bwd)

    # -- shape ops --

    def reshape(self, *shape):
        old = self.shape

        def bwd(g):
            self._accumulate(g.reshape(old))
        return Var(self.data.reshape(*shape), (self,), bwd)

    def transpose(self, axes):
        inv = np.argsort(axes)

        def bwd(g):
            self._accumulate(g.transpose(inv))
        return Var(self.data.transpose(axes), (self,), bwd)

    def narrow(self, axis, start, length):
        index = [slice(None)] * self.data.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)

        def bwd(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad[index] += g
        return Var(self.data[index], (self,), bwd)

    def sum(self):
        def bwd(g):
            self._accumulate(np.full_like(self.data, g))
        return Var(self.data.sum(), (self,), bwd)

    def mean(self):
        n = self.data.size

        def bwd(g):
            self._accumulate(np.full_like(self.data, g / n))
        return Var(self.data.mean(), (self,), bwd)


def _wrap(x):
    return x if isinstance(x, Var) else Var(x)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def concat(vars_, axis):
    sizes = [v.data.shape[axis] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for v, start, size in zip(vars_, offsets, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + size)
            v._accumulate(g[tuple(index)])
    return Var(np.concatenate([v.data for v in vars_], axis=axis), tuple(vars_), bwd)


def stack(vars_, axis=0):
    def bwd(g):
        for i, v in enumerate(vars_):
            v._accumulate(np.take(g, i, axis=axis))
    return Var(np.stack([v.data for v in vars_], axis=axis), tuple(vars_), bwd)


def pad2d(x: Var, pad_h: int, pad_w: int):
    """Zero-pad the last two axes of an NCHW tensor on the high side."""
    if pad_h == 0 and pad_w == 0:
        return x
    n, c, h, w = x.shape

    def bwd(g):
        x._accumulate(g[:, :, :h, :w])
    padded = np.pad(x.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
    return Var(padded, (x,), bwd)


def crop2d(x: Var, h: int, w: int):
    full_h, full_w = x.shape[2], x.shape[3]

    def bwd(g):
        x._accumulate(np.pad(g, ((0, 0), (0, 0), (0, full_h - h), (0, full_w - w))))
    return Var(x.data[:, :, :h, :w], (x,), bwd)


def _im2col(x, kh, kw):
    """x: N,C,H,W (already padded) -> N, H_out, W_out, C*kh*kw."""
    n, c, h, w = x.shape
    h_out, w_out = h - kh + 1, w - kw + 1
    s = x.strides
    shape = (n, c, h_out, w_out, kh, kw)
    strides = (s[0], s[1], s[2], s[3], s[2], s[3])
    patches = np.lib.stride_tricks.as_strided(x, shape, strides)
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(n, h_out, w_out, c * kh * kw)


def conv2d(x: Var, weight: Var, bias: Var):
    """Same-padding 2D convolution; x: N,C,H,W; weight: F,C,kh,kw; bias: F."""
    f, c, kh, kw = weight.shape
    ph, pw = kh // 2, kw // 2
    n, _, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw)  # N,H,W,C*kh*kw
    wm = weight.data.reshape(f, -1)
    out = cols @ wm.T + bias.data  # N,H,W,F

    def bwd(g):
        # g: N,F,H,W
        gm = g.transpose(0, 2, 3, 1)  # N,H,W,F
        bias._accumulate(gm.sum(axis=(0, 1, 2)))
        weight._accumulate(
            (gm.reshape(-1, f).T @ cols.reshape(-1, c * kh * kw)).reshape(weight.shape)
        )
        gcols = gm @ wm  # N,H,W,C*kh*kw
        gxp = np.zeros_like(xp)
        gcols = gcols.reshape(n, h, w, c, kh, kw)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        x._accumulate(gxp[:, :, ph:ph + h, pw:pw + w])
    return Var(out.transpose(0, 3, 1, 2), (x, weight, bias), bwd)


def maxpool2d(x: Var):
    """2x2 max pooling, stride 2; spatial dims must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x._accumulate(gx.reshape(n, c, h, w))
    return Var(out, (x,), bwd)


def upsample_nearest2d(x: Var):
    """Nearest-neighbor 2x upsampling of an NCHW tensor."""
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))
    return Var(out, (x,), bwd)


def sigmoid_bce_with_logits(logits: Var, targets: np.ndarray):
    """Mean binary cross-entropy on logits (log-sum-exp stabilized).

    loss = mean( max(z, 0) - z*y + log(1 + exp(-|z|)) )
    dloss/dz = (sigmoid(z) - y) / count
    """
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    if z.shape != y.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {y.shape}")
    per_cell = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bwd(g):
        logits._accumulate(g * (_sigmoid(z) - y) / n)
    return Var(per_cell.mean(), (logits,), bwd)
