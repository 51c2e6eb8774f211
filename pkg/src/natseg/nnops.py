"""Differentiable neural primitives on 4-D tensors.

Standard / grouped / pointwise 2-D convolution (direct loops plus an
im2col-style fast path), batch normalization, ReLU, sigmoid, last-dim
softmax and nearest-neighbor 2x upsampling.  All ops record tape nodes
with hand-derived backward rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateStatsError, ShapeError
from .tensor import (
    Tensor,
    as_rng,
    default_dtype,
    he_normal,
    observe_relu_input,
    record_op,
    zeros,
)


@dataclass
class Conv2dParams:
    """Weights plus the geometry of one convolution.

    weight is (c_out, c_in/groups, k, k); bias, when present, is stored
    (1, c_out, 1, 1) so it broadcasts over pixels.
    """

    weight: Tensor
    bias: Tensor | None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        c_out, _, kh, kw = self.weight.shape
        if kh != kw:
            raise ConfigError(f"square kernels only, got {kh}x{kw}")
        if kh % 2 != 1:
            raise ConfigError(f"kernel size must be odd, got {kh}")
        if self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise ConfigError("stride >= 1, padding >= 0, groups >= 1 required")
        if c_out % self.groups != 0:
            raise ConfigError(f"c_out={c_out} not divisible by groups={self.groups}")
        if self.bias is not None and self.bias.shape != (1, c_out, 1, 1):
            raise ShapeError(f"bias must be (1,{c_out},1,1), got {self.bias.shape}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def create(
        cls,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: int | np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        with_bias: bool = True,
    ) -> "Conv2dParams":
        """He-normal weights (fan_in = k*k*c_in/groups), zero bias."""
        if c_in % groups != 0:
            raise ConfigError(f"c_in={c_in} not divisible by groups={groups}")
        rng = as_rng(rng)
        fan_in = kernel * kernel * (c_in // groups)
        weight = he_normal(
            (c_out, c_in // groups, kernel, kernel), fan_in, rng, requires_grad=True
        )
        bias = zeros((1, c_out, 1, 1), requires_grad=True) if with_bias else None
        return cls(weight, bias, stride=stride, padding=padding, groups=groups)

    def parameters(self, prefix: str = ""):
        yield f"{prefix}weight", self.weight
        if self.bias is not None:
            yield f"{prefix}bias", self.bias


def conv_output_size(size: int, kernel: int, padding: int, stride: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _conv_geometry(x: Tensor, p: Conv2dParams) -> tuple[int, int]:
    if x.c != p.c_in:
        raise ShapeError(
            f"conv2d expects {p.c_in} input channels "
            f"({p.groups} groups of {p.c_in // p.groups}), got {x.c}"
        )
    out_h = conv_output_size(x.h, p.kernel, p.padding, p.stride)
    out_w = conv_output_size(x.w, p.kernel, p.padding, p.stride)
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"conv2d output would be {out_h}x{out_w} for input {x.h}x{x.w}, "
            f"kernel {p.kernel}, padding {p.padding}, stride {p.stride}"
        )
    return out_h, out_w


def _pad_input(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _forward_fast(x: np.ndarray, p: Conv2dParams, out_h: int, out_w: int) -> np.ndarray:
    n = x.shape[0]
    k, s, g = p.kernel, p.stride, p.groups
    cig = p.c_in // g
    cog = p.c_out // g
    xpad = _pad_input(x, p.padding)
    # (n, c, out_h, out_w, k, k) patch view, strided to the output grid
    windows = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    out = np.empty((n, p.c_out, out_h, out_w), dtype=x.dtype)
    for gi in range(g):
        patches = windows[:, gi * cig : (gi + 1) * cig]
        cols = patches.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, cig * k * k)
        w_mat = p.weight.data[gi * cog : (gi + 1) * cog].reshape(cog, cig * k * k).T
        prod = cols @ w_mat
        out[:, gi * cog : (gi + 1) * cog] = prod.reshape(
            n, out_h, out_w, cog
        ).transpose(0, 3, 1, 2)
    if p.bias is not None:
        out += p.bias.data
    return out


def _forward_direct(x: np.ndarray, p: Conv2dParams, out_h: int, out_w: int) -> np.ndarray:
    # Reference path: explicit loops over output channels and pixels.
    n = x.shape[0]
    k, s, g = p.kernel, p.stride, p.groups
    cig = p.c_in // g
    cog = p.c_out // g
    xpad = _pad_input(x, p.padding)
    out = np.zeros((n, p.c_out, out_h, out_w), dtype=x.dtype)
    for co in range(p.c_out):
        gi = co // cog
        w = p.weight.data[co]
        for oy in range(out_h):
            for ox in range(out_w):
                patch = xpad[:, gi * cig : (gi + 1) * cig, oy * s : oy * s + k, ox * s : ox * s + k]
                out[:, co, oy, ox] = np.sum(patch * w[None], axis=(1, 2, 3))
    if p.bias is not None:
        out += p.bias.data
    return out


def conv2d(x: Tensor, p: Conv2dParams, method: str = "fast") -> Tensor:
    """Grouped 2-D convolution; group g maps input block g to output block g."""
    out_h, out_w = _conv_geometry(x, p)
    if method == "fast":
        out = _forward_fast(x.data, p, out_h, out_w)
    elif method == "direct":
        out = _forward_direct(x.data, p, out_h, out_w)
    else:
        raise ConfigError(f"unknown conv2d method {method!r}")

    x_data = x.data
    k, s, g, pad = p.kernel, p.stride, p.groups, p.padding
    cig = p.c_in // g
    cog = p.c_out // g
    in_h, in_w = x.h, x.w

    def back(grad: np.ndarray) -> tuple:
        n = grad.shape[0]
        xpad = _pad_input(x_data, pad)
        windows = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        grad_w = np.empty_like(p.weight.data)
        grad_xpad = np.zeros_like(xpad)
        for gi in range(g):
            gsl = slice(gi * cig, (gi + 1) * cig)
            osl = slice(gi * cog, (gi + 1) * cog)
            cols = windows[:, gsl].transpose(0, 2, 3, 1, 4, 5).reshape(
                n * out_h * out_w, cig * k * k
            )
            g_flat = grad[:, osl].transpose(0, 2, 3, 1).reshape(n * out_h * out_w, cog)
            grad_w[osl] = (cols.T @ g_flat).T.reshape(cog, cig, k, k)
            grad_cols = (g_flat @ p.weight.data[osl].reshape(cog, cig * k * k)).reshape(
                n, out_h, out_w, cig, k, k
            )
            for ky in range(k):
                for kx in range(k):
                    grad_xpad[:, gsl, ky : ky + s * out_h : s, kx : kx + s * out_w : s] += (
                        grad_cols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
                    )
        grad_x = (
            grad_xpad[:, :, pad : pad + in_h, pad : pad + in_w] if pad else grad_xpad
        )
        grad_b = (
            grad.sum(axis=(0, 2, 3)).reshape(1, p.c_out, 1, 1)
            if p.bias is not None
            else None
        )
        return (grad_x, grad_w, grad_b)

    inputs = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return record_op(inputs, out, back)


def pointwise_conv(x: Tensor, p: Conv2dParams) -> Tensor:
    """1x1 ungrouped convolution: a per-pixel linear map over channels."""
    if p.kernel != 1 or p.groups != 1 or p.padding != 0:
        raise ConfigError(
            f"pointwise_conv requires k=1, groups=1, padding=0 "
            f"(got k={p.kernel}, groups={p.groups}, padding={p.padding})"
        )
    return conv2d(x, p)


@dataclass
class BatchNormState:
    """Per-channel affine normalization with train/eval behavior.

    Train mode standardizes with batch statistics over (n,h,w) and updates
    the running buffers as new = (1-momentum)*old + momentum*batch; eval
    mode standardizes with the running buffers only.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        dt = default_dtype()
        return cls(
            gamma=Tensor(np.ones((1, channels, 1, 1), dtype=dt), requires_grad=True),
            beta=Tensor(np.zeros((1, channels, 1, 1), dtype=dt), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dt),
            running_var=np.ones(channels, dtype=dt),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[1]

    def parameters(self, prefix: str = ""):
        yield f"{prefix}gamma", self.gamma
        yield f"{prefix}beta", self.beta

    def buffers(self, prefix: str = ""):
        yield f"{prefix}running_mean", self.running_mean
        yield f"{prefix}running_var", self.running_var


def batch_norm(x: Tensor, s: BatchNormState) -> Tensor:
    if x.c != s.channels:
        raise ShapeError(f"batch_norm expects {s.channels} channels, got {x.c}")
    gamma, beta = s.gamma, s.beta
    eps = s.epsilon

    if s.training:
        count = x.n * x.h * x.w
        if count <= 1:
            raise DegenerateStatsError(
                "batch statistics undefined: one value per channel "
                f"(batch {x.n}, spatial {x.h}x{x.w})"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        s.running_mean *= 1.0 - s.momentum
        s.running_mean += (s.momentum * mean).astype(s.running_mean.dtype)
        s.running_var *= 1.0 - s.momentum
        s.running_var += (s.momentum * var).astype(s.running_var.dtype)
    else:
        mean = s.running_mean
        var = s.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = gamma.data * x_hat + beta.data
    training = s.training

    def back(grad: np.ndarray) -> tuple:
        grad_beta = grad.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        grad_gamma = (grad * x_hat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        g_hat = grad * gamma.data
        if training:
            count = grad.shape[0] * grad.shape[2] * grad.shape[3]
            sum_g = g_hat.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
            grad_x = (
                inv_std.reshape(1, -1, 1, 1)
                * (g_hat - sum_g / count - x_hat * sum_gx / count)
            )
        else:
            grad_x = g_hat * inv_std.reshape(1, -1, 1, 1)
        return (grad_x, grad_gamma, grad_beta)

    return record_op((x, gamma, beta), out, back)


def relu(x: Tensor) -> Tensor:
    observe_relu_input(x.data)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)
    return record_op((x,), out, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """1/(1+exp(-x)) via the overflow-free branch for each sign."""
    data = x.data
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    ex = np.exp(data[~pos])
    out[~pos] = ex / (1.0 + ex)
    # saturated values round to exactly 0/1 at float resolution; keep the
    # open interval so downstream log-losses stay finite
    info = np.finfo(data.dtype)
    np.clip(out, info.tiny, np.nextafter(data.dtype.type(1.0), 0.0), out=out)
    return record_op((x,), out, lambda g: (g * out * (1.0 - out),))


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g: np.ndarray) -> tuple:
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return record_op((x,), out, back)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def back(g: np.ndarray) -> tuple:
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return record_op((x,), out, back)
