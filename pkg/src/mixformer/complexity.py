"""Static parameter and FLOPs accounting.

One multiply-accumulate counts as one FLOP for dense and depth-wise
convolutions and for linear layers. The two attention matmuls (scores and
weighted sum) together cost ``2 * N * C * H * W * K^2`` for windows of
``K x K`` tokens. Softmax, norms and activations add a fixed cost per element
(see ``ELEMENT_COST``).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from functools import singledispatch

from .attention import WindowAttention
from .backbone import ConvBN, MixFormer, Stage, Stem
from .block import FFN, MixingBlock
from .functional import conv_output_size
from .interactions import ChannelInteraction, SpatialInteraction
from .modules import BatchNorm2d, Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module

OP_KINDS = ("attention", "w_attention", "conv", "dwconv", "linear", "norm", "interaction", "ffn")
ELEMENT_COST = {"softmax": 5, "norm": 4, "gelu": 8, "sigmoid": 4, "mul": 1, "pool": 1}
FFN_RATIO = 4


@dataclass(frozen=True)
class ComplexityQuery:
    """An N x C x H x W input to one operator; K is the kernel or window size.

    ``c_out`` only matters for ``linear``, ``conv`` and ``interaction`` and
    defaults to ``c``.
    """

    kind: str
    n: int
    c: int
    h: int
    w: int
    k: int = 1
    c_out: int | None = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}; expected one of {OP_KINDS}")
        dims = (self.n, self.c, self.h, self.w, self.k) + ((self.c_out,) if self.c_out is not None else ())
        if any(int(v) != v or v < 1 for v in dims):
            raise ValueError(f"query dimensions must be positive integers: {self}")

    @property
    def out_channels(self) -> int:
        return self.c if self.c_out is None else self.c_out


def op_flops(q: ComplexityQuery) -> int:
    n, c, h, w, k, co = q.n, q.c, q.h, q.w, q.k, q.out_channels
    hw = h * w
    if q.kind == "attention":
        return 2 * n * c * hw * hw
    if q.kind == "w_attention":
        return 2 * n * c * hw * k * k
    if q.kind == "conv":
        return n * c * co * hw * k * k
    if q.kind == "dwconv":
        return n * c * hw * k * k
    if q.kind == "linear":
        return n * hw * c * co
    if q.kind == "norm":
        return ELEMENT_COST["norm"] * n * c * hw
    if q.kind == "interaction":
        hid = max(1, c // 4)
        return n * c * hw + n * (c * hid + hid * co) + n * (ELEMENT_COST["gelu"] * hid + ELEMENT_COST["sigmoid"] * co)
    # ffn: two linears with GELU on the expanded width
    hidden = FFN_RATIO * c
    return 2 * n * hw * c * hidden + ELEMENT_COST["gelu"] * n * hw * hidden


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    flops: int


@dataclass
class ComplexityReport:
    resolution: tuple
    batch: int = 1
    leaves: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(leaf.params for leaf in self.leaves)

    @property
    def total_flops(self) -> int:
        return sum(leaf.flops for leaf in self.leaves)

    def grouped(self, depth: int = 1) -> dict:
        """Sum leaves by the first ``depth`` dotted name parts (list indices kept)."""
        groups = {}
        for leaf in self.leaves:
            parts = leaf.name.split(".")
            key_parts, i = [], 0
            while i < len(parts) and len(key_parts) < depth:
                part = parts[i]
                if i + 1 < len(parts) and parts[i + 1].isdigit():
                    part = f"{part}.{parts[i + 1]}"
                    i += 1
                key_parts.append(part)
                i += 1
            key = ".".join(key_parts)
            p, f = groups.get(key, (0, 0))
            groups[key] = (p + leaf.params, f + leaf.flops)
        return groups

    def by_stage(self) -> dict:
        """Params and FLOPs for stem, each stage (with the downsample feeding it) and head."""
        out = {"stem": [0, 0], "stage1": [0, 0], "stage2": [0, 0], "stage3": [0, 0], "stage4": [0, 0], "head": [0, 0]}
        for leaf in self.leaves:
            parts = leaf.name.split(".")
            if parts[0] == "stages":
                key = f"stage{int(parts[1]) + 1}"
            elif parts[0] == "downsamples":
                key = f"stage{int(parts[1]) + 2}"
            elif parts[0] == "stem":
                key = "stem"
            else:
                key = "head"
            out[key][0] += leaf.params
            out[key][1] += leaf.flops
        return {k: tuple(v) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "batch": self.batch,
            "total_params": self.total_params,
            "total_flops": self.total_flops,
            "stages": {k: {"params": p, "flops": f} for k, (p, f) in self.by_stage().items()},
            "layers": [asdict(leaf) for leaf in self.leaves],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "kind", "params", "flops"])
        for leaf in self.leaves:
            writer.writerow([leaf.name, leaf.kind, leaf.params, leaf.flops])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [(name, f"{p:,}", f"{f / 1e9:.3f}") for name, (p, f) in self.by_stage().items()]
        rows.append(("total", f"{self.total_params:,}", f"{self.total_flops / 1e9:.3f}"))
        widths = [max(len(r[i]) for r in rows + [("part", "params", "GFLOPs")]) for i in range(3)]
        lines = [f"input {self.resolution[0]}x{self.resolution[1]}, batch {self.batch}"]
        for i, row in enumerate([("part", "params", "GFLOPs")] + rows):
            lines.append(f"{row[0]:<{widths[0]}}  {row[1]:>{widths[1]}}  {row[2]:>{widths[2]}}")
            if i == 0 or i == len(rows) - 1:
                lines.append("-" * (sum(widths) + 4))
        return "\n".join(lines)


def _own_params(module: Module) -> int:
    return sum(p.size for _, p in module.direct_parameters())


class _Walker:
    def __init__(self, batch: int):
        self.batch = batch
        self.leaves = []

    def add(self, name: str, kind: str, params: int, flops: int) -> None:
        self.leaves.append(LayerCost(name, kind, int(params), int(flops)))


@singledispatch
def _walk(module: Module, w: _Walker, name: str, shape: tuple) -> tuple:
    """Record the cost of ``module`` applied to a (C, H, W) map; return the output (C, H, W)."""
    raise TypeError(f"no complexity rule for {type(module).__name__}")


@_walk.register
def _(m: Conv2d, w: _Walker, name: str, shape: tuple) -> tuple:
    c, h, wd = shape
    s = m.spec
    ho, wo = conv_output_size(h, s.kernel, s.stride, s.pad), conv_output_size(wd, s.kernel, s.stride, s.pad)
    flops = op_flops(ComplexityQuery("conv", w.batch, c, ho, wo, s.kernel, s.out_channels))
    w.add(name, "conv", _own_params(m), flops)
    return s.out_channels, ho, wo


@_walk.register
def _(m: DepthwiseConv2d, w: _Walker, name: str, shape: tuple) -> tuple:
    c, h, wd = shape
    s = m.spec
    ho, wo = conv_output_size(h, s.kernel, s.stride, s.pad), conv_output_size(wd, s.kernel, s.stride, s.pad)
    w.add(name, "dwconv", _own_params(m), op_flops(ComplexityQuery("dwconv", w.batch, c, ho, wo, s.kernel)))
    return shape[0], ho, wo


@_walk.register
def _(m: BatchNorm2d, w: _Walker, name: str, shape: tuple) -> tuple:
    c, h, wd = shape
    w.add(name, "norm", _own_params(m), op_flops(ComplexityQuery("norm", w.batch, c, h, wd)))
    return shape


@_walk.register
def _(m: LayerNorm, w: _Walker, name: str, shape: tuple) -> tuple:
    c, h, wd = shape
    w.add(name, "norm", _own_params(m), op_flops(ComplexityQuery("norm", w.batch, c, h, wd)))
    return shape


@_walk.register
def _(m: Linear, w: _Walker, name: str, shape: tuple) -> tuple:
    _, h, wd = shape
    w.add(name, "linear", _own_params(m), op_flops(ComplexityQuery("linear", w.batch, m.d_in, h, wd, 1, m.d_out)))
    return m.d_out, h, wd


def _gelu(w: _Walker, name: str, shape: tuple) -> None:
    c, h, wd = shape
    w.add(name, "gelu", 0, ELEMENT_COST["gelu"] * w.batch * c * h * wd)


@_walk.register
def _(m: ConvBN, w: _Walker, name: str, shape: tuple) -> tuple:
    shape = _walk(m.conv, w, f"{name}.conv", shape)
    shape = _walk(m.bn, w, f"{name}.bn", shape)
    if m.act:
        _gelu(w, f"{name}.act", shape)
    return shape


@_walk.register
def _(m: Stem, w: _Walker, name: str, shape: tuple) -> tuple:
    for i, layer in enumerate(m.layers):
        shape = _walk(layer, w, f"{name}.layers.{i}", shape)
    return shape


@_walk.register
def _(m: ChannelInteraction, w: _Walker, name: str, shape: tuple) -> tuple:
    c, h, wd = shape
    w.add(f"{name}.pool", "pool", 0, ELEMENT_COST["pool"] * w.batch * c * h * wd)
    hid = _walk(m.conv1, w, f"{name}.conv1", (c, 1, 1))
    _walk(m.bn, w, f"{name}.bn", hid)
    _gelu(w, f"{name}.act", hid)
    out = _walk(m.conv2, w, f"{name}.conv2", hid)
    w.add(f"{name}.sigmoid", "sigmoid", 0, ELEMENT_COST["sigmoid"] * w.batch * out[0])
    return out


@_walk.register
def _(m: SpatialInteraction, w: _Walker, name: str, shape: tuple) -> tuple:
    hid = _walk(m.conv1, w, f"{name}.conv1", shape)
    _walk(m.bn, w, f"{name}.bn", hid)
    _gelu(w, f"{name}.act", hid)
    out = _walk(m.conv2, w, f"{name}.conv2", hid)
    w.add(f"{name}.sigmoid", "sigmoid", 0, ELEMENT_COST["sigmoid"] * w.batch * out[1] * out[2])
    return out


def _window_attention(m: WindowAttention, w: _Walker, name: str, shape: tuple, shift: bool) -> tuple:
    """Attention runs on the zero-padded map, so costs use the padded size."""
    c, h, wd = shape
    k = m.cfg.window_size
    hp, wp = -(-h // k) * k, -(-wd // k) * k
    _walk(m.qkv, w, f"{name}.qkv", (c, hp, wp))
    table = m.relative_position_bias_table
    flops = op_flops(ComplexityQuery("w_attention", w.batch, c, hp, wp, k))
    flops += ELEMENT_COST["softmax"] * w.batch * m.cfg.num_heads * hp * wp * k * k
    w.add(f"{name}.core", "w_attention", 0 if table is None else table.size, flops)
    _walk(m.proj, w, f"{name}.proj", (c, hp, wp))
    return shape


@_walk.register
def _(m: FFN, w: _Walker, name: str, shape: tuple) -> tuple:
    hid = _walk(m.fc1, w, f"{name}.fc1", shape)
    _gelu(w, f"{name}.act", hid)
    if m.dwconv is not None:
        hid = _walk(m.dwconv, w, f"{name}.dwconv", hid)
    return _walk(m.fc2, w, f"{name}.fc2", hid)


def _mul(w: _Walker, name: str, shape: tuple) -> None:
    c, h, wd = shape
    w.add(name, "mul", 0, ELEMENT_COST["mul"] * w.batch * c * h * wd)


@_walk.register
def _(m: MixingBlock, w: _Walker, name: str, shape: tuple) -> tuple:
    cfg = m.cfg
    d, h, wd = shape
    _walk(m.norm1, w, f"{name}.norm1", shape)
    if cfg.mode == "parallel":
        attn_in = _walk(m.proj_attn, w, f"{name}.proj_attn", shape)
        conv = _walk(m.proj_conv, w, f"{name}.proj_conv", shape)
        conv = _walk(m.dwconv, w, f"{name}.dwconv", conv)
        _walk(m.conv_norm, w, f"{name}.conv_norm", conv)
        if m.channel_interaction is not None:
            _walk(m.channel_interaction, w, f"{name}.channel_interaction", conv)
            _mul(w, f"{name}.v_gate", attn_in)
        attn = _window_attention(m.attn, w, f"{name}.attn", attn_in, cfg.shifted_window)
        if m.spatial_interaction is not None:
            _walk(m.spatial_interaction, w, f"{name}.spatial_interaction", attn)
            _mul(w, f"{name}.spatial_gate", conv)
        _walk(m.attn_norm, w, f"{name}.attn_norm", attn)
    else:
        feat = _walk(m.proj_in, w, f"{name}.proj_in", shape)
        if m.channel_interaction is not None:
            _walk(m.channel_interaction, w, f"{name}.channel_interaction", feat)
            _mul(w, f"{name}.v_gate", feat)
        attn = _window_attention(m.attn, w, f"{name}.attn", feat, cfg.shifted_window)
        conv = _walk(m.dwconv, w, f"{name}.dwconv", attn)
        _walk(m.conv_norm, w, f"{name}.conv_norm", conv)
        if m.spatial_interaction is not None:
            _walk(m.spatial_interaction, w, f"{name}.spatial_interaction", attn)
            _mul(w, f"{name}.spatial_gate", conv)
        _walk(m.proj_out, w, f"{name}.proj_out", conv)
    _walk(m.norm2, w, f"{name}.norm2", shape)
    _walk(m.ffn, w, f"{name}.ffn", shape)
    return shape


@_walk.register
def _(m: Stage, w: _Walker, name: str, shape: tuple) -> tuple:
    for i, block in enumerate(m.blocks):
        shape = _walk(block, w, f"{name}.blocks.{i}", shape)
    return shape


@_walk.register
def _(m: MixFormer, w: _Walker, name: str, shape: tuple) -> tuple:
    shape = _walk(m.stem, w, "stem", shape)
    for i, stage in enumerate(m.stages):
        if i:
            shape = _walk(m.downsamples[i - 1], w, f"downsamples.{i - 1}", shape)
        shape = _walk(stage, w, f"stages.{i}", shape)
    shape = _walk(m.proj, w, "proj", shape)
    _gelu(w, "proj.act", shape)
    c, h, wd = shape
    w.add("pool", "pool", 0, ELEMENT_COST["pool"] * w.batch * c * h * wd)
    return _walk(m.head, w, "head", (c, 1, 1))


def model_report(model: Module, resolution=(224, 224), batch: int = 1, in_channels: int = 3) -> ComplexityReport:
    """Per-layer parameters and FLOPs of ``model`` on a ``batch`` x C x H x W input."""
    h, wd = resolution
    walker = _Walker(batch)
    _walk(model, walker, "", (in_channels, h, wd))
    return ComplexityReport((h, wd), batch, walker.leaves)
