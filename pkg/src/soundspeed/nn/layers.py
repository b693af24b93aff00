"""Layer primitives on NCHW numpy arrays.

Every layer is functional: ``forward(x, train)`` returns ``(y, cache)`` and
``backward(dy, cache)`` returns ``dx`` while accumulating parameter gradients
into ``Param.grad``. The same layer object can therefore run several replica
passes per step (weight sharing): each pass has its own cache and gradients
sum naturally. Arrays keep the dtype they are given; build networks in
float64 for finite-difference checks, float32 for training.
"""

from __future__ import annotations

import math

import numpy as np


class Param:
    """A learnable tensor and its accumulated gradient."""

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _same_pad(size: int, stride: int, k: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


class Conv2d:
    """kxk cross-correlation with 'same'-style ceil padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3,
                 stride: tuple = (1, 1), rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, kernel
        self.stride = tuple(stride)
        if any(s not in (1, 2) for s in self.stride):
            raise ValueError("conv strides must be 1 or 2")
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        bound = math.sqrt(1.0 / fan_in)
        self.weight = Param(rng.uniform(-bound, bound,
                                        (out_ch, in_ch, kernel, kernel)).astype(dtype))
        self.bias = Param(np.zeros(out_ch, dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.stride[0]), -(-w // self.stride[1])

    def _im2col(self, xp: np.ndarray, oh: int, ow: int) -> np.ndarray:
        b, c, _, _ = xp.shape
        sh, sw = self.stride
        k = self.k
        cols = np.empty((b, c, k, k, oh, ow), dtype=xp.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + sh * oh:sh, kj:kj + sw * ow:sw]
        return cols.reshape(b, c * k * k, oh * ow)

    def forward(self, x: np.ndarray, train: bool = True):
        if x.shape[1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} channels, got {x.shape[1]}")
        b, c, h, w = x.shape
        oh, ow = self.out_shape(h, w)
        pt, pb = _same_pad(h, self.stride[0], self.k)
        pl, pr = _same_pad(w, self.stride[1], self.k)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols = self._im2col(xp, oh, ow)
        wmat = self.weight.value.reshape(self.out_ch, -1)
        y = np.einsum("of,bfp->bop", wmat, cols, optimize=True)
        y = y.reshape(b, self.out_ch, oh, ow) + self.bias.value[None, :, None, None]
        cache = (cols, xp.shape, (pt, pl), (h, w), (oh, ow))
        return y, cache

    def backward(self, dy: np.ndarray, cache):
        cols, xp_shape, (pt, pl), (h, w), (oh, ow) = cache
        b = dy.shape[0]
        sh, sw = self.stride
        k = self.k
        dy_mat = dy.reshape(b, self.out_ch, oh * ow)
        wmat = self.weight.value.reshape(self.out_ch, -1)
        self.weight.grad += np.einsum("bop,bfp->of", dy_mat, cols,
                                      optimize=True).reshape(self.weight.value.shape)
        self.bias.grad += dy.sum(axis=(0, 2, 3))
        dcols = np.einsum("of,bop->bfp", wmat, dy_mat, optimize=True)
        dcols = dcols.reshape(b, self.in_ch, k, k, oh, ow)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + sh * oh:sh, kj:kj + sw * ow:sw] += dcols[:, :, ki, kj]
        return dxp[:, :, pt:pt + h, pl:pl + w]


class BatchNorm2d:
    """Per-channel normalization with learned affine and running stats."""

    def __init__(self, n_ch: int, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float32):
        self.n_ch = n_ch
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(n_ch, dtype=dtype))
        self.beta = Param(np.zeros(n_ch, dtype=dtype))
        self.running_mean = np.zeros(n_ch, dtype=np.float64)
        self.running_var = np.ones(n_ch, dtype=np.float64)

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool = True):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]
        return y, (xhat, inv_std.astype(x.dtype), train)

    def backward(self, dy: np.ndarray, cache):
        xhat, inv_std, train = cache
        self.gamma.grad += np.sum(dy * xhat, axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        g = self.gamma.value[None, :, None, None]
        if not train:
            return dy * g * inv_std[None, :, None, None]
        dxhat = dy * g
        dx = (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
              - xhat * np.mean(dxhat * xhat, axis=(0, 2, 3), keepdims=True))
        return dx * inv_std[None, :, None, None]


class ReLU:
    def params(self):
        return []

    def forward(self, x: np.ndarray, train: bool = True):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask):
        return dy * mask


class MaxPool2x2:
    """2x2 max pooling, stride 2; odd dims padded with -inf. Gradient goes to
    the first (row-major) argmax in each window."""

    def params(self):
        return []

    def forward(self, x: np.ndarray, train: bool = True):
        b, c, h, w = x.shape
        oh, ow = -(-h // 2), -(-w // 2)
        if h % 2 or w % 2:
            xp = np.full((b, c, oh * 2, ow * 2), -np.inf, dtype=x.dtype)
            xp[:, :, :h, :w] = x
        else:
            xp = x
        win = xp.reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (idx, (h, w))

    def backward(self, dy: np.ndarray, cache):
        idx, (h, w) = cache
        b, c, oh, ow = dy.shape
        dwin = np.zeros((b, c, oh, ow, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dxp = dwin.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            b, c, oh * 2, ow * 2)
        return dxp[:, :, :h, :w]


class Upsample2x:
    """Nearest-neighbor x2 upsampling in both dims."""

    def params(self):
        return []

    def forward(self, x: np.ndarray, train: bool = True):
        y = x.repeat(2, axis=2).repeat(2, axis=3)
        return y, None

    def backward(self, dy: np.ndarray, cache):
        b, c, h2, w2 = dy.shape
        return dy.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """n_out x n_in separable linear interpolation weights (rows sum to 1)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        pos = (i + 0.5) * scale - 0.5
        pos = min(max(pos, 0.0), n_in - 1.0)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n_in - 1)
        w = pos - lo
        m[i, lo] += 1.0 - w
        m[i, hi] += w
    return m.astype(dtype)


class LinearResize:
    """Separable linear interpolation to a fixed (h, w); backward is the exact
    transpose map."""

    def __init__(self, target_h: int, target_w: int):
        if target_h < 1 or target_w < 1:
            raise ValueError("resize target must be >= 1")
        self.target_h = target_h
        self.target_w = target_w
        self._mats: dict = {}

    def params(self):
        return []

    def _mat(self, n_in: int, n_out: int, dtype):
        key = (n_in, n_out, np.dtype(dtype).str)
        if key not in self._mats:
            self._mats[key] = _resize_matrix(n_in, n_out, dtype)
        return self._mats[key]

    def forward(self, x: np.ndarray, train: bool = True):
        b, c, h, w = x.shape
        rz = self._mat(h, self.target_h, x.dtype)
        rx = self._mat(w, self.target_w, x.dtype)
        y = np.einsum("oh,bchw,pw->bcop", rz, x, rx, optimize=True)
        return y, (h, w)

    def backward(self, dy: np.ndarray, cache):
        h, w = cache
        rz = self._mat(h, self.target_h, dy.dtype)
        rx = self._mat(w, self.target_w, dy.dtype)
        return np.einsum("ho,bcop,wp->bchw", rz.T, dy, rx.T, optimize=True)


def l2_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad
