"""Building blocks for a small numpy CNN.

Convolution is implemented as one GEMM per batch: the input is expanded
with im2col and multiplied by the layer's weight matrix of shape
(c_out, c_in*kh*kw).  Each column of that weight matrix is a prunable
weight group; a binary column mask zeroes whole groups at once, and the
backward pass forces their weight gradients to zero so a masked group
never moves.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output extent of a convolution along one spatial axis.

    Raises ConfigError unless (size + 2*pad - kernel) is a positive
    multiple of the stride, i.e. the kernel tiles the padded input exactly.
    """
    span = size + 2 * pad - kernel
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"conv geometry does not tile: size={size} kernel={kernel} "
            f"stride={stride} pad={pad}"
        )
    return span // stride + 1


def _batch_windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    h_out = conv_output_size(h, kh, stride, pad)
    w_out = conv_output_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win, h_out, w_out


def im2col_batch(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """im2col over a batch: (n, c, h, w) -> (c*kh*kw, n*h_out*w_out).

    Row order is channel-major, then row-major within the kh x kw patch,
    matching a row-major reshape of conv weights to (c_out, c*kh*kw).
    Columns enumerate samples, then output positions in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected (n, c, h, w) input, got shape {x.shape}")
    n, c, _, _ = x.shape
    win, h_out, w_out = _batch_windows(x, kh, kw, stride, pad)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * h_out * w_out)
    return np.ascontiguousarray(cols)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Expand one sample (c, h, w) into patch columns (c*kh*kw, h_out*w_out).

    Column q holds the receptive field of output position q (row-major over
    the output grid); padding positions contribute zeros.
    """
    if x.ndim != 3:
        raise ShapeError(f"expected (c, h, w) input, got shape {x.shape}")
    return im2col_batch(x[None], kh, kw, stride, pad)


def col2im_batch(
    cols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Scatter-add the inverse of im2col_batch (used for input gradients)."""
    n, c, h, w = x_shape
    h_out = conv_output_size(h, kh, stride, pad)
    w_out = conv_output_size(w, kw, stride, pad)
    blocks = cols.reshape(c, kh, kw, n, h_out, w_out)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki : ki + h_out * stride : stride, kj : kj + w_out * stride : stride] += (
                blocks[:, ki, kj].transpose(1, 0, 2, 3)
            )
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


class ConvLayer:
    """2-D convolution with a per-column group mask on the im2col weight matrix.

    weights: (c_out, c_in, kh, kw); bias: (c_out,).  The mask has one entry
    per weight-matrix column (Nc = c_in*kh*kw).  Masked columns contribute
    exactly zero to the forward pass and receive exactly zero weight gradient.
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0):
        if weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got shape {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match c_out={weights.shape[0]}")
        if stride < 1 or pad < 0:
            raise ConfigError(f"invalid stride={stride} or pad={pad}")
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.pad = pad
        self.mask = np.ones(self.n_columns, dtype=weights.dtype)
        self.grad_weights: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self._masked_matrix: np.ndarray | None = None
        self._cache = None

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @property
    def n_columns(self) -> int:
        _, c_in, kh, kw = self.weights.shape
        return c_in * kh * kw

    @property
    def weight_matrix(self) -> np.ndarray:
        """Row-major view of the weights as (c_out, Nc)."""
        return self.weights.reshape(self.c_out, self.n_columns)

    def masked_matrix(self) -> np.ndarray:
        if self._masked_matrix is None:
            self._masked_matrix = self.weight_matrix * self.mask
        return self._masked_matrix

    def invalidate(self) -> None:
        """Drop the cached masked weight matrix (call after editing weights)."""
        self._masked_matrix = None

    def set_mask(self, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=self.weights.dtype)
        if mask.shape != (self.n_columns,):
            raise ShapeError(f"mask shape {mask.shape}, expected ({self.n_columns},)")
        if not np.all((mask == 0) | (mask == 1)):
            raise ConfigError("mask entries must be 0 or 1")
        self.mask = mask
        self._masked_matrix = None

    def column_trainable(self) -> np.ndarray:
        """Broadcastable trainability mask over the 4-D weight tensor."""
        _, c_in, kh, kw = self.weights.shape
        return self.mask.reshape(1, c_in, kh, kw)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv input shape {x.shape}, expected (n, {self.c_in}, h, w)")
        n = x.shape[0]
        kh, kw = self.kernel
        cols = im2col_batch(x, kh, kw, self.stride, self.pad)
        h_out = conv_output_size(x.shape[2], kh, self.stride, self.pad)
        w_out = conv_output_size(x.shape[3], kw, self.stride, self.pad)
        out = self.masked_matrix() @ cols + self.bias[:, None]
        out = out.reshape(self.c_out, n, h_out * w_out).transpose(1, 0, 2)
        self._cache = (x.shape, cols)
        return out.reshape(n, self.c_out, h_out, w_out)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x_shape, cols = self._cache
        n, c_out = grad_out.shape[0], grad_out.shape[1]
        if n != x_shape[0] or c_out != self.c_out:
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward pass")
        kh, kw = self.kernel
        g2 = grad_out.transpose(1, 0, 2, 3).reshape(c_out, -1)
        grad_w = (g2 @ cols.T) * self.mask
        self.grad_weights = grad_w.reshape(self.weights.shape)
        self.grad_bias = g2.sum(axis=1)
        grad_cols = self.masked_matrix().T @ g2
        return col2im_batch(grad_cols, x_shape, kh, kw, self.stride, self.pad)

    def params(self):
        return [
            ("weights", self.weights, self.grad_weights, self.column_trainable()),
            ("bias", self.bias, self.grad_bias, None),
        ]


class ReluLayer:
    def __init__(self):
        self._active = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._active = x > 0
        return np.where(self._active, x, 0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._active, grad_out, 0)

    def params(self):
        return []


class MaxPoolLayer:
    """Non-overlapping square max pooling (stride equals the window size)."""

    def __init__(self, size: int, stride: int | None = None):
        stride = size if stride is None else stride
        if size < 1:
            raise ConfigError(f"pool size must be positive, got {size}")
        if stride != size:
            raise ConfigError(
                f"only non-overlapping pooling is supported (stride {stride} != size {size})"
            )
        self.size = size
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        s = self.size
        if h % s or w % s:
            raise ShapeError(f"input {h}x{w} is not divisible by pool size {s}")
        h_out, w_out = h // s, w // s
        tiles = x.reshape(n, c, h_out, s, w_out, s).transpose(0, 1, 2, 4, 3, 5)
        tiles = tiles.reshape(n, c, h_out, w_out, s * s)
        idx = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_shape, idx = self._cache
        n, c, h, w = x_shape
        s = self.size
        h_out, w_out = h // s, w // s
        tiles = np.zeros((n, c, h_out, w_out, s * s), dtype=grad_out.dtype)
        np.put_along_axis(tiles, idx[..., None], grad_out[..., None], axis=-1)
        tiles = tiles.reshape(n, c, h_out, w_out, s, s).transpose(0, 1, 2, 4, 3, 5)
        return tiles.reshape(n, c, h, w)

    def params(self):
        return []


class FlattenLayer:
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)

    def params(self):
        return []


class FcLayer:
    """Fully-connected layer y = x W^T + b with weights (n_out, n_in)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        if weights.ndim != 2:
            raise ShapeError(f"fc weights must be 2-D, got shape {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match n_out={weights.shape[0]}")
        self.weights = weights
        self.bias = bias
        self.grad_weights: np.ndarray | None = None
        self.grad_bias: np.ndarray | None = None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"fc input shape {x.shape}, expected (n, {self.weights.shape[1]})"
            )
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grad_weights = grad_out.T @ self._x
        self.grad_bias = grad_out.sum(axis=0)
        return grad_out @ self.weights

    def params(self):
        return [
            ("weights", self.weights, self.grad_weights, None),
            ("bias", self.bias, self.grad_bias, None),
        ]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood of the softmax over `logits`.

    Returns (loss, grad_logits).  Stabilised with max-subtraction so large
    logits cannot overflow the exponential.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (n, classes), got shape {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
