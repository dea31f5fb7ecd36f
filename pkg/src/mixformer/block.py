"""The Mixing Block: parallel window attention and depth-wise convolution with
bi-directional interactions, followed by an FFN, both under residuals."""
from __future__ import annotations

from dataclasses import dataclass, replace

from . import functional as F
from .attention import WindowAttention, WmsaConfig
from .interactions import ChannelInteraction, SpatialInteraction, hidden_channels
from .modules import BatchNorm2d, Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .tensor import Tensor, concat, reshape, transpose
from .windows import window_partition, window_reverse

MODES = ("parallel", "successive")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MixingBlockConfig:
    dim: int
    num_heads: int
    attn_dim: int | None = None  # defaults to dim // 2
    window_size: int = 7
    dwconv_kernel: int = 3
    mlp_ratio: float = 4.0
    mode: str = "parallel"
    channel_interaction: bool = True
    spatial_interaction: bool = True
    shifted_window: bool = False
    dwconv_in_ffn: bool = False
    relative_position_bias: bool = True
    reduction: int = 4

    def __post_init__(self):
        if self.attn_dim is None:
            object.__setattr__(self, "attn_dim", self.dim // 2)
        if not 0 < self.attn_dim < self.dim:
            raise ConfigError(f"attn_dim must lie in (0, {self.dim}), got {self.attn_dim}")
        if self.attn_dim % self.num_heads:
            raise ConfigError(f"attn_dim {self.attn_dim} not divisible by {self.num_heads} heads")
        if self.dwconv_kernel < 1 or self.dwconv_kernel % 2 == 0:
            raise ConfigError(f"dwconv_kernel must be odd, got {self.dwconv_kernel}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")

    @property
    def conv_dim(self) -> int:
        return self.dim - self.attn_dim

    @property
    def hidden_dim(self) -> int:
        return int(round(self.dim * self.mlp_ratio))

    @property
    def shift(self) -> int:
        return self.window_size // 2 if self.shifted_window else 0


# -- parameter bookkeeping used to match the successive layout ----------

def _attn_params(d: int, cfg: MixingBlockConfig) -> int:
    table = (2 * cfg.window_size - 1) ** 2 * cfg.num_heads if cfg.relative_position_bias else 0
    return 3 * d * d + 3 * d + d * d + d + table


def _gate_params(c_in: int, c_out: int, reduction: int) -> int:
    hid = hidden_channels(c_in, reduction)
    return c_in * hid + hid + 2 * hid + hid * c_out + c_out


def mixer_parameters(cfg: MixingBlockConfig, successive_dim: int | None = None) -> int:
    """Parameter count of the token-mixing half (everything but norms and FFN)."""
    d, kc, r = cfg.dim, cfg.dwconv_kernel, cfg.reduction
    if cfg.mode == "parallel" and successive_dim is None:
        da, dc = cfg.attn_dim, cfg.conv_dim
        total = d * da + da + _attn_params(da, cfg) + 2 * da
        total += d * dc + dc + dc * kc * kc + dc + 2 * dc
        if cfg.channel_interaction:
            total += _gate_params(dc, da, r)
        if cfg.spatial_interaction:
            total += _gate_params(da, 1, r)
        return total
    ds = successive_dim if successive_dim is not None else successive_width(cfg)
    total = d * ds + ds + _attn_params(ds, cfg) + ds * kc * kc + ds + 2 * ds + ds * d + d
    if cfg.channel_interaction:
        total += _gate_params(ds, ds, r)
    if cfg.spatial_interaction:
        total += _gate_params(ds, 1, r)
    return total


def successive_width(cfg: MixingBlockConfig) -> int:
    """Width of the stacked attention->dwconv path whose parameter count is
    closest to the parallel layout; always a multiple of ``num_heads``."""
    target = mixer_parameters(replace(cfg, mode="parallel"))
    h = cfg.num_heads
    candidates = range(h, 2 * cfg.dim + 1, h)
    return min(candidates, key=lambda ds: (abs(mixer_parameters(cfg, ds) - target), ds))


# -- layout helpers -------------------------------------------------------

def tokens_to_map(x: Tensor, h: int, w: int) -> Tensor:
    n, _, c = x.shape
    return reshape(transpose(x, (0, 2, 1)), (n, c, h, w), layout="NCHW")


def map_to_tokens(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return reshape(transpose(reshape(x, (n, c, h * w)), (0, 2, 1)), (n, h * w, c), layout="NLC")


class FFN(Module):
    """Linear -> GELU -> [3x3 depth-wise conv] -> Linear, applied per token."""

    def __init__(self, dim: int, hidden: int, dwconv: bool = False, rng=None):
        self.fc1 = Linear(dim, hidden, rng=rng)
        self.dwconv = DepthwiseConv2d(hidden, 3, rng=rng) if dwconv else None
        self.fc2 = Linear(hidden, dim, rng=rng)

    def forward(self, x: Tensor, h: int | None = None, w: int | None = None) -> Tensor:
        y = F.gelu(self.fc1(x))
        if self.dwconv is not None:
            if h is None or w is None or h * w != x.shape[1]:
                raise ValueError(f"dwconv in FFN needs H*W == sequence length, got {h}x{w} vs {x.shape[1]}")
            y = map_to_tokens(self.dwconv(tokens_to_map(y, h, w)))
        return self.fc2(y)


def ffn(x: Tensor, module: FFN, h: int | None = None, w: int | None = None) -> Tensor:
    return module(x, h, w)


class MixingBlock(Module):
    def __init__(self, cfg: MixingBlockConfig, rng=None):
        self.cfg = cfg
        d = cfg.dim
        self.norm1 = LayerNorm(d)
        if cfg.mode == "parallel":
            da, dc = cfg.attn_dim, cfg.conv_dim
            self.proj_attn = Linear(d, da, rng=rng)
            self.attn = WindowAttention(WmsaConfig(da, cfg.num_heads, cfg.window_size,
                                                   relative_position_bias=cfg.relative_position_bias), rng)
            self.attn_norm = LayerNorm(da)
            self.proj_conv = Conv2d(d, dc, 1, rng=rng)
            self.dwconv = DepthwiseConv2d(dc, cfg.dwconv_kernel, rng=rng)
            self.conv_norm = BatchNorm2d(dc)
            gate_src, gate_dst, spatial_src = dc, da, da
        else:
            ds = successive_width(cfg)
            self.proj_in = Linear(d, ds, rng=rng)
            self.attn = WindowAttention(WmsaConfig(ds, cfg.num_heads, cfg.window_size,
                                                   relative_position_bias=cfg.relative_position_bias), rng)
            self.dwconv = DepthwiseConv2d(ds, cfg.dwconv_kernel, rng=rng)
            self.conv_norm = BatchNorm2d(ds)
            self.proj_out = Linear(ds, d, rng=rng)
            gate_src, gate_dst, spatial_src = ds, ds, ds
        self.channel_interaction = (
            ChannelInteraction(gate_src, gate_dst, cfg.reduction, rng) if cfg.channel_interaction else None
        )
        self.spatial_interaction = (
            SpatialInteraction(spatial_src, cfg.reduction, rng) if cfg.spatial_interaction else None
        )
        self.norm2 = LayerNorm(d)
        self.ffn = FFN(d, cfg.hidden_dim, cfg.dwconv_in_ffn, rng)

    def _attend(self, feat: Tensor, gate: Tensor | None) -> Tensor:
        windows, layout, mask = window_partition(feat, self.cfg.window_size, self.cfg.shift)
        out = self.attn(windows, mask, gate)
        return window_reverse(out, layout)

    def mix(self, y: Tensor, h: int, w: int) -> Tensor:
        if self.cfg.mode == "successive":
            return self._mix_successive(y, h, w)
        conv = self.conv_norm(self.dwconv(self.proj_conv(tokens_to_map(y, h, w))))
        gate = self.channel_interaction(conv) if self.channel_interaction is not None else None
        attn = self._attend(tokens_to_map(self.proj_attn(y), h, w), gate)
        if self.spatial_interaction is not None:
            conv = conv * self.spatial_interaction(attn)
        attn = self.attn_norm(map_to_tokens(attn))
        return concat([attn, map_to_tokens(conv)], axis=-1)

    def _mix_successive(self, y: Tensor, h: int, w: int) -> Tensor:
        feat = tokens_to_map(self.proj_in(y), h, w)
        gate = self.channel_interaction(feat) if self.channel_interaction is not None else None
        attn = self._attend(feat, gate)
        conv = self.conv_norm(self.dwconv(attn))
        if self.spatial_interaction is not None:
            conv = conv * self.spatial_interaction(attn)
        return self.proj_out(map_to_tokens(conv))

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        if x.ndim != 3 or x.shape[1] != h * w:
            raise ValueError(f"block input {x.shape} does not match H*W = {h}*{w}")
        if x.shape[2] != self.cfg.dim:
            raise ValueError(f"block expects {self.cfg.dim} channels, got {x.shape[2]}")
        x = x + self.mix(self.norm1(x), h, w)
        return x + self.ffn(self.norm2(x), h, w)


def mixing_block_forward(x: Tensor, block: MixingBlock, h: int, w: int) -> Tensor:
    return block(x, h, w)
