"""Forward and backward passes for the fixed layer set of the detector.

Tensors are plain numpy arrays laid out as (batch, channels, rows, cols).
Every function works in whatever floating dtype it is handed, so the same
code serves float32 training and float64 gradient verification.

Convolutions are 3x3 cross-correlations (no kernel flip) with zero padding
of one pixel and stride one, so spatial size is always preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError

KERNEL = 3

BN_EPS = 1e-4
BN_MOMENTUM = 0.9


@dataclass
class ConvParams:
    weight: np.ndarray  # (k_out, c_in, 3, 3)
    bias: np.ndarray  # (k_out,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (KERNEL, KERNEL):
            raise ContractError(f"conv weight must be (k_out, c_in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ContractError(f"conv bias shape {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def k_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _check_nchw(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ContractError(f"{name} must be a 4-d (n, c, h, w) array, got shape {x.shape}")


# -- convolution -------------------------------------------------------------


def im2col(x: np.ndarray) -> np.ndarray:
    """Unfold 3x3 neighbourhoods: (n, c, h, w) -> (n, c*9, h*w), zero padded."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    return windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * KERNEL * KERNEL, h * w)


def _conv_cols(cols: np.ndarray, params: ConvParams, h: int, w: int) -> np.ndarray:
    k = params.k_out
    out = np.matmul(params.weight.reshape(k, -1), cols)
    out += params.bias[:, None]
    return out.reshape(cols.shape[0], k, h, w)


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """3x3 same-size cross-correlation.

    ``out[n, o, i, j] = bias[o] + sum_{c,dy,dx} weight[o, c, dy, dx] * x[n, c, i+dy-1, j+dx-1]``
    with out-of-range input taken as zero.
    """
    _check_nchw(x)
    if x.shape[1] != params.c_in:
        raise ContractError(f"conv2d expects {params.c_in} input channels, got {x.shape[1]}")
    return _conv_cols(im2col(x), params, x.shape[2], x.shape[3])


def _flipped_transposed(weight: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def conv2d_backward(
    x: np.ndarray,
    params: ConvParams,
    grad_out: np.ndarray,
    *,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, ConvParams]:
    """Gradients of a conv2d call with respect to its input, weight and bias.

    ``cols`` may carry the im2col unfolding from the forward pass. The input
    gradient is itself a same-size convolution of ``grad_out`` with the
    spatially flipped, channel-transposed kernel.
    """
    _check_nchw(x)
    _check_nchw(grad_out, "grad_out")
    n, _, h, w = x.shape
    if grad_out.shape != (n, params.k_out, h, w):
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match conv output {(n, params.k_out, h, w)}"
        )
    if cols is None:
        cols = im2col(x)
    g = grad_out.reshape(n, params.k_out, h * w)
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(params.weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        back = ConvParams(_flipped_transposed(params.weight), np.zeros(params.c_in, x.dtype))
        grad_x = conv2d(grad_out, back)
    return grad_x, ConvParams(grad_w.astype(x.dtype, copy=False), grad_b.astype(x.dtype, copy=False))


# -- pointwise ---------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is taken as 0
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, kept strictly inside (0, 1).

    In finite precision 1/(1+e^-x) rounds to exactly 1 for large x, so the
    result is clipped one ulp inside the open interval.
    """
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    tiny = np.finfo(x.dtype).tiny
    return np.clip(y, tiny, 1.0 - np.finfo(x.dtype).epsneg)


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward pass expressed through the forward output ``y``."""
    return grad_out * y * (1 - y)


# -- batch normalisation -----------------------------------------------------


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    train: bool


def batchnorm(
    x: np.ndarray, params: BatchNormParams, train: bool
) -> tuple[np.ndarray, BatchNormCache]:
    """Per-channel batch normalisation.

    In training mode the batch statistics over (n, h, w) normalise the input
    and the running statistics are updated in place by an exponential moving
    average (the running variance uses the unbiased batch estimate). In
    inference mode the running statistics are used instead.
    """
    _check_nchw(x)
    if x.shape[1] != params.channels:
        raise ContractError(f"batchnorm expects {params.channels} channels, got {x.shape[1]}")
    if train:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ContractError("batchnorm in training mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = params.momentum
        params.running_mean[...] = m * params.running_mean + (1 - m) * mean
        params.running_var[...] = m * params.running_var + (1 - m) * var * (count / (count - 1))
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = (1.0 / np.sqrt(var + params.eps)).astype(x.dtype, copy=False)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    out = xhat * params.gamma[:, None, None] + params.beta[:, None, None]
    return out, BatchNormCache(xhat, inv_std, train)


def batchnorm_backward(
    cache: BatchNormCache, params: BatchNormParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat = cache.xhat
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    dxhat = grad_out * params.gamma[:, None, None]
    if not cache.train:
        return dxhat * cache.inv_std[:, None, None], grad_gamma, grad_beta
    count = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3))
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
    grad_x = (cache.inv_std / count)[:, None, None] * (
        count * dxhat - s1[:, None, None] - xhat * s2[:, None, None]
    )
    return grad_x, grad_gamma, grad_beta


# -- loss --------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over batch items of each item's mean squared difference.

    All items share a shape, so this equals the mean over every element.
    Returns the loss and its exact gradient with respect to ``pred``.
    """
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype, copy=False)


# -- layer objects -----------------------------------------------------------


class Layer:
    """A differentiable stage: ``forward`` caches what ``backward`` needs."""

    tag = "????"

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError

    def parameters(self) -> list[np.ndarray]:
        return []

    def gradients(self) -> list[np.ndarray]:
        return []

    def state(self) -> list[np.ndarray]:
        """Every array needed to reconstruct the layer, parameters first."""
        return self.parameters()

    def astype(self, dtype) -> None:
        pass


class Conv2d(Layer):
    tag = "CONV"

    def __init__(self, params: ConvParams, need_input_grad: bool = True):
        self.params = params
        self.need_input_grad = need_input_grad
        self._grads = ConvParams(np.zeros_like(params.weight), np.zeros_like(params.bias))
        self._x: np.ndarray | None = None
        self._cols: np.ndarray | None = None

    def forward(self, x, train=False):
        _check_nchw(x)
        if x.shape[1] != self.params.c_in:
            raise ContractError(f"conv2d expects {self.params.c_in} input channels, got {x.shape[1]}")
        cols = im2col(x)
        if train:
            self._x, self._cols = x, cols
        return _conv_cols(cols, self.params, x.shape[2], x.shape[3])

    def backward(self, grad_out):
        if self._x is None:
            raise ContractError("backward called before a training-mode forward")
        grad_x, grads = conv2d_backward(
            self._x, self.params, grad_out, cols=self._cols, need_input_grad=self.need_input_grad
        )
        self._grads = grads
        self._x = self._cols = None
        return grad_x

    def parameters(self):
        return [self.params.weight, self.params.bias]

    def gradients(self):
        return [self._grads.weight, self._grads.bias]

    def astype(self, dtype):
        self.params = ConvParams(self.params.weight.astype(dtype), self.params.bias.astype(dtype))
        self._grads = ConvParams(np.zeros_like(self.params.weight), np.zeros_like(self.params.bias))


class BatchNorm2d(Layer):
    tag = "BNRM"

    def __init__(self, params: BatchNormParams):
        self.params = params
        self._cache: BatchNormCache | None = None
        self._grads = [np.zeros_like(params.gamma), np.zeros_like(params.beta)]

    def forward(self, x, train=False):
        out, cache = batchnorm(x, self.params, train)
        self._cache = cache if train else None
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise ContractError("backward called before a training-mode forward")
        grad_x, gg, gb = batchnorm_backward(self._cache, self.params, grad_out)
        self._grads = [gg, gb]
        self._cache = None
        return grad_x

    def parameters(self):
        return [self.params.gamma, self.params.beta]

    def gradients(self):
        return self._grads

    def state(self):
        p = self.params
        return [p.gamma, p.beta, p.running_mean, p.running_var]

    def astype(self, dtype):
        p = self.params
        self.params = BatchNormParams(
            p.gamma.astype(dtype), p.beta.astype(dtype),
            p.running_mean.astype(dtype), p.running_var.astype(dtype), p.eps, p.momentum,
        )
        self._grads = [np.zeros_like(self.params.gamma), np.zeros_like(self.params.beta)]


class ReLU(Layer):
    tag = "RELU"

    def __init__(self):
        self.mask: np.ndarray | None = None

    def forward(self, x, train=False):
        if train:
            self.mask = x > 0
        return relu(x)

    def backward(self, grad_out):
        return grad_out * self.mask


class Sigmoid(Layer):
    tag = "SIGM"

    def __init__(self):
        self._y: np.ndarray | None = None

    def forward(self, x, train=False):
        y = sigmoid(x)
        if train:
            self._y = y
        return y

    def backward(self, grad_out):
        return sigmoid_backward(self._y, grad_out)


@dataclass
class Sequential:
    """An ordered stack of layers behaving as a single layer."""

    layers: list[Layer] = field(default_factory=list)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray | None:
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.gradients()]

    def astype(self, dtype) -> None:
        for layer in self.layers:
            layer.astype(dtype)

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float32)
