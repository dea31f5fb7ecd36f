"""The four-stage MixFormer network and its named variants."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import functional as F
from .block import MODES, ConfigError, MixingBlock, MixingBlockConfig, map_to_tokens, tokens_to_map
from .modules import BatchNorm2d, Conv2d, Linear, Module
from .tensor import Tensor

MIN_RESOLUTION = 32


@dataclass(frozen=True)
class BlockTemplate:
    """Block settings shared by every Mixing Block of a model."""

    attn_ratio: float = 0.5
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
        if not 0 < self.attn_ratio < 1:
            raise ConfigError(f"attn_ratio must lie in (0, 1), got {self.attn_ratio}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int
    blocks: tuple
    heads: tuple
    num_classes: int = 1000
    input_resolution: tuple = (224, 224)
    proj_dim: int = 1280
    dims: tuple | None = None  # explicit stage widths; default doubles base_channels
    block: BlockTemplate = field(default_factory=BlockTemplate)

    def __post_init__(self):
        for name in ("blocks", "heads", "input_resolution", "dims"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
        if isinstance(self.block, dict):
            object.__setattr__(self, "block", BlockTemplate(**self.block))
        if len(self.blocks) != 4 or len(self.heads) != 4:
            raise ConfigError(f"a model has exactly 4 stages, got blocks={self.blocks} heads={self.heads}")
        if self.dims is not None and len(self.dims) != 4:
            raise ConfigError(f"dims must list 4 stage widths, got {self.dims}")
        if self.base_channels < 2 or any(b < 1 for b in self.blocks) or any(h < 1 for h in self.heads):
            raise ConfigError("base_channels >= 2 and positive block/head counts required")
        if self.num_classes < 1 or self.proj_dim < 1:
            raise ConfigError("num_classes and proj_dim must be positive")
        if len(self.input_resolution) != 2:
            raise ConfigError(f"input_resolution must be (H, W), got {self.input_resolution}")
        for i in range(4):
            self.block_config(i, 0)

    @property
    def stage_dims(self) -> list:
        if self.dims is not None:
            return list(self.dims)
        return [self.base_channels * 2 ** i for i in range(4)]

    @property
    def stem_dim(self) -> int:
        return max(1, self.stage_dims[0] // 2)

    def block_config(self, stage: int, index: int) -> MixingBlockConfig:
        t = self.block
        dim, heads = self.stage_dims[stage], self.heads[stage]
        attn_dim = max(heads, int(round(dim * t.attn_ratio / heads)) * heads)
        return MixingBlockConfig(
            dim=dim,
            num_heads=heads,
            attn_dim=attn_dim,
            window_size=t.window_size,
            dwconv_kernel=t.dwconv_kernel,
            mlp_ratio=t.mlp_ratio,
            mode=t.mode,
            channel_interaction=t.channel_interaction,
            spatial_interaction=t.spatial_interaction,
            shifted_window=t.shifted_window and index % 2 == 1,
            dwconv_in_ffn=t.dwconv_in_ffn,
            relative_position_bias=t.relative_position_bias,
            reduction=t.reduction,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        block = data.pop("block", {})
        block_known = {f.name for f in fields(BlockTemplate)}
        if set(block) - block_known:
            raise ConfigError(f"unknown block config keys: {sorted(set(block) - block_known)}")
        return cls(block=BlockTemplate(**block), **data)


VARIANTS = {
    "b0": ModelConfig(24, (1, 2, 6, 6), (3, 6, 12, 24)),
    "b1": ModelConfig(32, (1, 2, 6, 6), (2, 4, 8, 16)),
    "b2": ModelConfig(32, (2, 2, 8, 8), (2, 4, 8, 16)),
    "b3": ModelConfig(48, (2, 2, 8, 6), (3, 6, 12, 24)),
    "b4": ModelConfig(64, (2, 2, 8, 8), (4, 8, 16, 32)),
    "b5": ModelConfig(96, (1, 2, 8, 6), (6, 12, 24, 48)),
    "b6": ModelConfig(96, (2, 4, 16, 12), (6, 12, 24, 48)),
}


def get_variant(name: str) -> ModelConfig:
    key = name.lower().replace("mixformer-", "")
    if key not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; known variants: {', '.join(VARIANTS)}")
    return VARIANTS[key]


class ConvBN(Module):
    """3x3 convolution (no bias) followed by BatchNorm and an optional GELU."""

    def __init__(self, c_in: int, c_out: int, stride: int, act: bool, rng=None):
        self.conv = Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False, rng=rng)
        self.bn = BatchNorm2d(c_out)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return F.gelu(y) if self.act else y


class Stem(Module):
    def __init__(self, c_out: int, rng=None):
        mid = max(1, c_out // 2)
        self.layers = [
            ConvBN(3, mid, 2, True, rng),
            ConvBN(mid, mid, 1, True, rng),
            ConvBN(mid, c_out, 2, False, rng),
        ]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[2] < 4 or x.shape[3] < 4:
            raise ValueError(f"stem needs (N, 3, H>=4, W>=4) input, got {x.shape}")
        for layer in self.layers:
            x = layer(x)
        return x


class MixFormer(Module):
    def __init__(self, cfg: ModelConfig, rng=None):
        self.cfg = cfg
        dims = cfg.stage_dims
        self.stem = Stem(dims[0], rng)
        self.stages = []
        self.downsamples = []
        for i in range(4):
            stage = Stage([MixingBlock(cfg.block_config(i, j), rng) for j in range(cfg.blocks[i])])
            self.stages.append(stage)
            if i < 3:
                self.downsamples.append(ConvBN(dims[i], dims[i + 1], 2, False, rng))
        self.proj = Linear(dims[3], cfg.proj_dim, rng=rng)
        self.head = Linear(cfg.proj_dim, cfg.num_classes, rng=rng)

    def forward_features(self, x: Tensor) -> list:
        """Per-stage NCHW feature maps (strides 4, 8, 16, 32)."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) images, got {x.shape}")
        if min(x.shape[2:]) < MIN_RESOLUTION:
            raise ValueError(
                f"input {x.shape[2]}x{x.shape[3]} too small for four downsamplings (min {MIN_RESOLUTION})"
            )
        feats = []
        x = self.stem(x)
        for i, stage in enumerate(self.stages):
            if i:
                x = self.downsamples[i - 1](x)
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: Tensor) -> Tensor:
        feat = self.forward_features(x)[-1]
        tokens = F.gelu(self.proj(map_to_tokens(feat)))
        return self.head(tokens.mean(axis=1))


class Stage(Module):
    def __init__(self, blocks: list):
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        t = map_to_tokens(x)
        for block in self.blocks:
            t = block(t, h, w)
        return tokens_to_map(t, h, w)


def build_model(variant, seed: int | None = 0, num_classes: int | None = None) -> MixFormer:
    """Instantiate a variant name (``"b0"``..``"b6"``) or a :class:`ModelConfig`.

    ``seed=None`` leaves every weight at zero, which is enough for counting.
    """
    cfg = get_variant(variant) if isinstance(variant, str) else variant
    if not isinstance(cfg, ModelConfig):
        raise TypeError(f"expected a variant name or ModelConfig, got {type(variant).__name__}")
    if num_classes is not None:
        cfg = replace(cfg, num_classes=num_classes)
    rng = None if seed is None else np.random.default_rng(seed)
    return MixFormer(cfg, rng).name_parameters()


def stem(x: Tensor, model: MixFormer) -> Tensor:
    return model.stem(x)


def downsample(x: Tensor, model: MixFormer, stage: int) -> Tensor:
    return model.downsamples[stage](x)


def classify(x: Tensor, model: MixFormer) -> Tensor:
    return model(x)
