"""Cross-branch gates: conv branch -> attention values (channel) and attention -> conv (spatial)."""
from __future__ import annotations

from . import functional as F
from .modules import BatchNorm2d, Conv2d, Module
from .tensor import Tensor, reshape


def hidden_channels(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


class ChannelInteraction(Module):
    """GAP -> 1x1 conv -> BN -> GELU -> 1x1 conv -> sigmoid, giving an (N, C_out) gate."""

    def __init__(self, c_in: int, c_out: int, reduction: int = 4, rng=None):
        hidden = hidden_channels(c_in, reduction)
        self.c_out = c_out
        self.conv1 = Conv2d(c_in, hidden, 1, rng=rng)
        self.bn = BatchNorm2d(hidden)
        self.conv2 = Conv2d(hidden, c_out, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        pooled = reshape(F.global_avg_pool(x), (n, c, 1, 1))
        h = F.gelu(self.bn(self.conv1(pooled)))
        return reshape(F.sigmoid(self.conv2(h)), (n, self.c_out))


class SpatialInteraction(Module):
    """1x1 conv -> BN -> GELU -> 1x1 conv to one channel -> sigmoid, giving (N, 1, H, W)."""

    def __init__(self, c_in: int, reduction: int = 4, rng=None):
        hidden = hidden_channels(c_in, reduction)
        self.conv1 = Conv2d(c_in, hidden, 1, rng=rng)
        self.bn = BatchNorm2d(hidden)
        self.conv2 = Conv2d(hidden, 1, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.conv2(F.gelu(self.bn(self.conv1(x)))))


def channel_interaction(conv_feat: Tensor, gate: ChannelInteraction) -> Tensor:
    return gate(conv_feat)


def spatial_interaction(attn_feat: Tensor, gate: SpatialInteraction) -> Tensor:
    return gate(attn_feat)
