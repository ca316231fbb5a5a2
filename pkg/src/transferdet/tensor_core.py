"""Dense numeric kernel: paired forward/backward layer functions on numpy arrays.

Arrays are float32 and row-major.  A single image is ``[C, H, W]``; batches
are stacked channel-major as ``[C, N, H, W]`` so that im2col needs no
transposes.  There is no autodiff graph: every forward returns the cache its
backward needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.99

Tensor = np.ndarray


@dataclass
class Parameter:
    """A trainable array with its gradient and momentum buffer."""

    value: np.ndarray
    gradient: np.ndarray = field(default=None)  # type: ignore[assignment]
    momentum_buffer: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.gradient is None:
            self.gradient = np.zeros_like(self.value)
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros_like(self.value)
        if not (self.value.shape == self.gradient.shape == self.momentum_buffer.shape):
            raise ConfigurationError("parameter value/gradient/momentum shapes differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.gradient[...] = 0


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    """Floor semantics: a trailing partial window is dropped."""
    span = size + 2 * pad - k
    if span < 0:
        raise ConfigurationError(
            f"input size {size} incompatible with kernel {k}, stride {stride}, pad {pad}"
        )
    return span // stride + 1


def _as_batch(x: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        return x[:, None]
    if x.ndim != 4:
        raise ConfigurationError(f"expected [C,H,W] or [C,N,H,W], got shape {x.shape}")
    return x


def _unbatch(x: np.ndarray, single: bool) -> np.ndarray:
    return x[:, 0] if single else x


def conv2d_forward(x, weights, bias, stride: int = 1, pad: int = 0):
    """Cross-correlation. Returns ``(out, cache)``; ``bias`` may be None."""
    single = x.ndim == 3
    x = _as_batch(x)
    c, n, h, w = x.shape
    f, wc, k, k2 = weights.shape
    if wc != c or k != k2:
        raise ConfigurationError(
            f"weights {weights.shape} do not match input with {c} channels"
        )
    if bias is not None and bias.shape != (f,):
        raise ConfigurationError(f"bias shape {bias.shape} != ({f},)")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ConfigurationError(f"input {h}x{w} smaller than kernel {k}")
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    if pad:
        xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, :, di:di + stride * (ho - 1) + 1:stride,
                                 dj:dj + stride * (wo - 1) + 1:stride]
    cols = cols.reshape(c * k * k, n * ho * wo)
    out = weights.reshape(f, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(f, n, ho, wo)
    cache = ((c, n, h, w), cols, weights, stride, pad, bias is not None, single)
    return _unbatch(out, single), cache


def conv2d_backward(grad_out, cache):
    """Returns ``(grad_input, grad_weights, grad_bias_or_None)``."""
    (c, n, h, w), cols, weights, stride, pad, has_bias, single = cache
    grad_out = _as_batch(grad_out)
    f, _, k, _ = weights.shape
    _, _, ho, wo = grad_out.shape
    g = grad_out.reshape(f, -1)
    grad_w = (g @ cols.T).reshape(weights.shape)
    grad_b = g.sum(axis=1) if has_bias else None
    dcols = (weights.reshape(f, -1).T @ g).reshape(c, k, k, n, ho, wo)
    if k == 1 and stride == 1 and pad == 0:
        dx = dcols[:, 0, 0]
    else:
        dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + stride * (ho - 1) + 1:stride,
                    dj:dj + stride * (wo - 1) + 1:stride] += dcols[:, di, dj]
        dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return _unbatch(np.ascontiguousarray(dx), single), grad_w, grad_b


def conv2d(x, weights, bias, stride: int = 1, pad: int = 0):
    return conv2d_forward(x, weights, bias, stride, pad)[0]


def maxpool_forward(x, size: int = 2, stride: int = 2):
    """2x2/2 max pooling; gradient goes to the first maximum in row-major order."""
    if size != 2 or stride != 2:
        raise ConfigurationError("only size=2, stride=2 pooling is supported")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ConfigurationError(f"maxpool needs even H and W, got {h}x{w}")
    quads = (x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2])
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for q in quads:
        m = (q == out) & ~taken
        taken |= m
        masks.append(m)
    return out, (x.shape, masks)


def maxpool_backward(grad_out, cache):
    x_shape, masks = cache
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    gx[..., 0::2, 0::2] = grad_out * masks[0]
    gx[..., 0::2, 1::2] = grad_out * masks[1]
    gx[..., 1::2, 0::2] = grad_out * masks[2]
    gx[..., 1::2, 1::2] = grad_out * masks[3]
    return gx


def maxpool(x, size: int = 2, stride: int = 2):
    return maxpool_forward(x, size, stride)[0]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode: str = "infer"):
    """Per-channel normalisation over the N, H, W axes.

    In ``train`` mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place.
    """
    c = x.shape[0]
    for name, arr in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ConfigurationError(f"{name} shape {arr.shape} != ({c},)")
    axes = tuple(range(1, x.ndim))
    bshape = (c,) + (1,) * (x.ndim - 1)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= BN_MOMENTUM
        running_mean += (1 - BN_MOMENTUM) * mean
        running_var *= BN_MOMENTUM
        running_var += (1 - BN_MOMENTUM) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ConfigurationError(f"unknown batchnorm mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var.astype(np.float64) + BN_EPS)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype).reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, mode)


def batchnorm_backward(grad_out, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, mode = cache
    c = xhat.shape[0]
    axes = tuple(range(1, xhat.ndim))
    bshape = (c,) + (1,) * (xhat.ndim - 1)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    gx_hat = grad_out * gamma.reshape(bshape)
    if mode == "train":
        m = xhat.size // c
        dx = (inv_std.reshape(bshape) / m) * (
            m * gx_hat
            - gx_hat.sum(axis=axes).reshape(bshape)
            - xhat * (gx_hat * xhat).sum(axis=axes).reshape(bshape)
        )
    else:
        dx = gx_hat * inv_std.reshape(bshape)
    return dx.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def batchnorm(x, gamma, beta, running_mean, running_var, mode: str = "infer"):
    return batchnorm_forward(x, gamma, beta, running_mean, running_var, mode)[0]


def leaky_relu(x):
    return np.where(x > 0, x, x * x.dtype.type(LEAKY_SLOPE))


def leaky_relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(LEAKY_SLOPE))


def sgd_momentum_step(params: Sequence[Parameter], lr: float, momentum: float = 0.9,
                      weight_decay: float = 5e-4) -> None:
    """In-place SGD with momentum and L2 decay; zeroes gradients afterwards.

    Raises DivergenceError (leaving every value untouched) if any gradient is
    non-finite.
    """
    for p in params:
        if not np.all(np.isfinite(p.gradient)):
            raise DivergenceError("non-finite gradient; update step aborted")
    for p in params:
        dt = p.value.dtype.type
        step = p.gradient + dt(weight_decay) * p.value
        p.momentum_buffer *= dt(momentum)
        p.momentum_buffer -= dt(lr) * step
        # where=: adding +0.0 would turn a -0.0 weight into +0.0
        np.add(p.value, p.momentum_buffer, out=p.value, where=p.momentum_buffer != 0)
        p.gradient[...] = 0


def finite_difference_check(
    params: Sequence[Parameter],
    loss_and_grads: Callable[[], float],
    eps: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_and_grads`` must evaluate the scalar loss at the current parameter
    values and populate every ``Parameter.gradient``.  Errors are taken per
    parameter array: ``max|a - n| / max(max|a|, max|n|, 1e-8)``.  With
    ``max_entries`` only a random subset of each array's entries is perturbed.
    """
    for p in params:
        p.zero_grad()
    loss_and_grads()
    analytic = [p.gradient.astype(np.float64).copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        num = np.zeros(idx.size)
        for t, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_and_grads()
            flat[i] = orig - eps
            down = loss_and_grads()
            flat[i] = orig
            num[t] = (up - down) / (2 * eps)
        an = a.reshape(-1)[idx]
        scale = max(np.abs(an).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        err = np.abs(an - num).max(initial=0.0) / scale
        worst = max(worst, float(err))
    for p in params:
        p.zero_grad()
    return worst
