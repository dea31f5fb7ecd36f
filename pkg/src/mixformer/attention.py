"""Window-based multi-head self-attention with learned relative position bias."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import functional as F
from .modules import Linear, Module
from .tensor import Parameter, Tensor, matmul, reshape, take, transpose


@dataclass(frozen=True)
class WmsaConfig:
    dim: int
    num_heads: int
    window_size: int
    qkv_bias: bool = True
    relative_position_bias: bool = True

    def __post_init__(self):
        if self.dim % self.num_heads:
            raise ValueError(f"attention dim {self.dim} not divisible by {self.num_heads} heads")
        if self.window_size < 1:
            raise ValueError(f"window size must be >= 1, got {self.window_size}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    @property
    def scale(self) -> float:
        return self.head_dim ** -0.5


@lru_cache(maxsize=None)
def relative_position_index(window_size: int) -> np.ndarray:
    """(K*K, K*K) row index into a ((2K-1)^2, heads) bias table."""
    k = window_size
    ys, xs = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    ys, xs = ys.reshape(-1), xs.reshape(-1)
    dy = ys[:, None] - ys[None, :] + k - 1
    dx = xs[:, None] - xs[None, :] + k - 1
    index = dy * (2 * k - 1) + dx
    index.flags.writeable = False
    return index


def relative_position_bias(window_size: int, num_heads: int, table: Tensor) -> Tensor:
    """Look up the (heads, K*K, K*K) bias from a ((2K-1)^2, heads) table."""
    rows = (2 * window_size - 1) ** 2
    if table.shape != (rows, num_heads):
        raise ValueError(f"bias table must have shape {(rows, num_heads)}, got {table.shape}")
    bias = take(table, relative_position_index(window_size))  # (L, L, h)
    return transpose(bias, (2, 0, 1))


class WindowAttention(Module):
    def __init__(self, cfg: WmsaConfig, rng=None):
        self.cfg = cfg
        self.qkv = Linear(cfg.dim, 3 * cfg.dim, bias=cfg.qkv_bias, rng=rng)
        self.proj = Linear(cfg.dim, cfg.dim, rng=rng)
        if cfg.relative_position_bias:
            self.relative_position_bias_table = Parameter(
                np.zeros(((2 * cfg.window_size - 1) ** 2, cfg.num_heads))
            )
        else:
            self.relative_position_bias_table = None

    def forward(self, windows: Tensor, mask: np.ndarray | None = None, v_gate: Tensor | None = None) -> Tensor:
        return wmsa_forward(windows, self, mask, v_gate)


def wmsa_forward(
    windows: Tensor, attn: WindowAttention, mask: np.ndarray | None = None, v_gate: Tensor | None = None
) -> Tensor:
    """Attention inside each window of ``windows`` (B', K*K, D).

    ``mask`` is (nW, K*K, K*K) and is matched to windows image-major.
    ``v_gate`` is (N, D) and multiplies the values of every window of image n.
    """
    cfg = attn.cfg
    bp, length, dim = windows.shape
    if dim != cfg.dim or length != cfg.window_size ** 2:
        raise ValueError(f"windows {windows.shape} do not match attention config {cfg}")
    h, d = cfg.num_heads, cfg.head_dim

    n_win = None
    if mask is not None:
        n_win = mask.shape[0]
        if mask.shape[1:] != (length, length) or bp % n_win:
            raise ValueError(f"mask of shape {mask.shape} does not fit {bp} windows of {length} tokens")
    if v_gate is not None:
        n_img = v_gate.shape[0]
        if v_gate.shape != (n_img, dim) or bp % n_img or (n_win is not None and bp != n_img * n_win):
            raise ValueError(f"v_gate of shape {v_gate.shape} does not fit {bp} windows")

    qkv = reshape(attn.qkv(windows), (bp, length, 3, dim))
    q, k, v = qkv[:, :, 0], qkv[:, :, 1], qkv[:, :, 2]
    if v_gate is not None:
        n_img = v_gate.shape[0]
        v = reshape(v, (n_img, bp // n_img, length, dim)) * reshape(v_gate, (n_img, 1, 1, dim))
        v = reshape(v, (bp, length, dim))

    def heads(t):
        return transpose(reshape(t, (bp, length, h, d)), (0, 2, 1, 3))

    q, k, v = heads(q), heads(k), heads(v)
    scores = matmul(q * cfg.scale, transpose(k, (0, 1, 3, 2)))  # (B', h, L, L)
    if attn.relative_position_bias_table is not None:
        scores = scores + relative_position_bias(cfg.window_size, h, attn.relative_position_bias_table)
    if mask is not None and mask.any():
        scores = reshape(scores, (bp // n_win, n_win, h, length, length))
        scores = scores + Tensor(mask[None, :, None])
        scores = reshape(scores, (bp, h, length, length))
    weights = F.softmax(scores, axis=-1)
    out = transpose(matmul(weights, v), (0, 2, 1, 3))
    return attn.proj(reshape(out, (bp, length, dim), layout="NLC"))
