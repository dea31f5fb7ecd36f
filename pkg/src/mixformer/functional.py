"""Differentiable neural-network primitives with fused analytic backward passes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import Tensor, as_tensor

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int | None = None  # None means "same": (kernel - 1) // 2
    depthwise: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.depthwise and self.in_channels != self.out_channels:
            raise ValueError("depthwise convolution needs in_channels == out_channels")

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2 if self.padding is None else self.padding

    @property
    def weight_shape(self) -> tuple:
        if self.depthwise:
            return (self.out_channels, 1, self.kernel, self.kernel)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def output_size(self, h: int, w: int) -> tuple:
        return conv_output_size(h, self.kernel, self.stride, self.pad), conv_output_size(
            w, self.kernel, self.stride, self.pad
        )


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# -- linear --------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is (D_in, D_out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    d_in, d_out = weight.shape
    x2 = x.data.reshape(-1, d_in)
    w = weight.data
    out = x2 @ w
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _back(g):
        g2 = g.reshape(-1, d_out)
        grads = [(g2 @ w.T).reshape(lead + (d_in,)), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor._from_op(out.reshape(lead + (d_out,)), parents, _back, x.layout)


# -- convolution ---------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    # (N, C, Ho, Wo, K, K) -> (N*Ho*Wo, C*K*K)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _conv_geometry(x: Tensor, k: int, stride: int, padding: int) -> tuple:
    if x.ndim != 4:
        raise ValueError(f"convolution expects NCHW input, got shape {x.shape}")
    _, _, h, w = x.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError(f"kernel {k} larger than padded input {(h + 2 * padding, w + 2 * padding)}")
    return conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D cross-correlation; weight is (C_out, C_in, K, K)."""
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"square kernels only, got {weight.shape}")
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {c_in}")
    ho, wo = _conv_geometry(x, k, stride, padding)
    n = x.shape[0]
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)
    xp_shape = xp.shape

    def _back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (gm.T @ cols).reshape(weight.shape)
        dcols = (gm @ wmat).reshape(n, ho, wo, c_in, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else dxp
        grads = [dx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, _back, "NCHW")


def dwconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Depth-wise convolution: one (K, K) filter per channel, weight (C, 1, K, K)."""
    c, one, k, _ = weight.shape
    if one != 1 or x.shape[1] != c:
        raise ValueError(f"dwconv2d: weight {weight.shape} incompatible with input {x.shape}")
    ho, wo = _conv_geometry(x, k, stride, padding)
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    w = weight.data[:, 0]
    out = np.zeros((x.shape[0], c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] * w[
                None, :, i, j, None, None
            ]
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _back(g):
        dxp = np.zeros(xp.shape)
        gw = np.zeros((c, 1, k, k))
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + stride * (ho - 1) + 1, stride),
                      slice(j, j + stride * (wo - 1) + 1, stride))
                gw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
                dxp[sl] += g * w[None, :, i, j, None, None]
        dx = dxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else dxp
        grads = [dx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op(out, parents, _back, "NCHW")


# -- normalization -------------------------------------------------------

def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray, axes: tuple) -> np.ndarray:
    return inv_std * (
        g_hat - g_hat.mean(axis=axes, keepdims=True) - x_hat * (g_hat * x_hat).mean(axis=axes, keepdims=True)
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty dimension")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: affine params must have shape ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xd - mu) * inv_std
    gd = gamma.data

    def _back(g):
        g_hat = g * gd
        dx = _normalize_backward(g_hat, x_hat, inv_std, (-1,))
        red = tuple(range(g.ndim - 1))
        return dx, (g * x_hat).sum(axis=red), g.sum(axis=red)

    return Tensor._from_op(x_hat * gd + beta.data, (x, gamma, beta), _back, x.layout)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple:
    """Batch normalization over channel axis 1 of (N, C, ...) inputs.

    Returns ``(out, (new_mean, new_var))``; the running statistics are
    returned rather than mutated. Running variance uses the unbiased batch
    estimate when more than one value per channel is available.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: affine params must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    gd = gamma.data.reshape(bshape)
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        count = xd.size // c
        unbiased = var * count / (count - 1) if count > 1 else var
        new_stats = (
            (1 - momentum) * (np.zeros(c) if running_mean is None else running_mean) + momentum * mu.reshape(c),
            (1 - momentum) * (np.ones(c) if running_var is None else running_var) + momentum * unbiased.reshape(c),
        )
    else:
        if running_mean is None or running_var is None:
            raise ValueError("batch_norm in eval mode needs running statistics")
        mu = np.asarray(running_mean).reshape(bshape)
        var = np.asarray(running_var).reshape(bshape)
        new_stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xd - mu) * inv_std
    out = x_hat * gd + beta.data.reshape(bshape)

    def _back(g):
        g_hat = g * gd
        if training:
            dx = _normalize_backward(g_hat, x_hat, inv_std, axes)
        else:
            dx = g_hat * inv_std
        return dx, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._from_op(out, (x, gamma, beta), _back, x.layout), new_stats


# -- activations ---------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return Tensor._from_op(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), x.layout)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), x.layout)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return Tensor._from_op(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), x.layout)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W of an NCHW tensor -> (N, C)."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    return as_tensor(x).mean(axis=(2, 3))
