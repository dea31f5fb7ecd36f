"""Ready-made gradient checks at three scopes: primitives, blocks and a micro model.

Each check builds its own random inputs from ``seed`` and reduces the
output to a scalar through a fixed random projection, so every output
coordinate contributes to the checked gradient.
"""
from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np

from . import functional as F
from . import tensor as T
from .attention import WindowAttention, WmsaConfig, wmsa_forward
from .backbone import ModelConfig, build_model
from .block import FFN, MixingBlock, MixingBlockConfig
from .gradcheck import finite_difference_check
from .interactions import ChannelInteraction, SpatialInteraction
from .modules import BatchNorm2d, Module
from .tensor import Parameter, Tensor
from .training import cross_entropy
from .windows import window_partition, window_reverse

SCOPES = ("op", "block", "model")
BLOCK_FLAGS = ("channel_interaction", "spatial_interaction", "shifted_window", "dwconv_in_ffn", "relative_position_bias")


def _projector(out: Tensor, rng) -> np.ndarray:
    return rng.normal(size=out.shape)


def _scalar(fn, rng):
    """Wrap ``fn() -> Tensor`` as ``() -> sum(fn() * R)`` with R fixed on first call."""
    holder = {}

    def f():
        out = fn()
        if "r" not in holder:
            holder["r"] = _projector(out, rng)
        return (out * Tensor(holder["r"])).sum()

    return f


def randomize(module: Module, rng, scale: float = 0.3) -> Module:
    """Give every parameter and BN buffer non-trivial values (zero-init tables included)."""
    for p in module.parameters():
        p.assign(rng.normal(scale=scale, size=p.shape) + (1.0 if p.name.endswith("norm.weight") else 0.0))
    for _, mod in module.named_modules():
        if isinstance(mod, BatchNorm2d):
            mod.running_mean = rng.normal(scale=0.1, size=mod.channels)
            mod.running_var = rng.uniform(0.5, 1.5, size=mod.channels)
    return module


def _inp(rng, *shape) -> Parameter:
    return Parameter(rng.normal(size=shape), name="input")


def op_checks(seed: int = 0, epsilon: float = 1e-5, tol: float = 1e-4) -> list:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, fn, params, inputs):
        report = finite_difference_check(_scalar(fn, rng), params, epsilon, tol, inputs=inputs, seed=seed)
        results.append((name, report))

    def named(name, arr):
        return Parameter(arr, name=name)

    a, b = _inp(rng, 3, 4), _inp(rng, 4)
    run("add_broadcast", lambda: a + b, [], [a, b])
    run("mul_broadcast", lambda: a * b, [], [a, b])
    pos = Parameter(rng.uniform(0.5, 2.0, size=(4,)), name="denominator")
    run("div_broadcast", lambda: a / pos, [], [a, pos])
    run("sub_neg", lambda: 1.0 - a - b, [], [a, b])
    run("exp_log", lambda: T.exp(a * 0.5) + T.log(pos), [], [a, pos])
    m1, m2 = _inp(rng, 2, 3, 4), _inp(rng, 2, 4, 5)
    run("matmul_batched", lambda: T.matmul(m1, m2), [], [m1, m2])
    t4 = _inp(rng, 2, 3, 4, 5)
    run("sum_mean", lambda: t4 * T.tsum(t4, axis=(1, 3), keepdims=True) + T.mean(t4, axis=2, keepdims=True), [], [t4])
    run("reshape_transpose", lambda: T.transpose(T.reshape(t4, (6, 20)), (1, 0)), [], [t4])
    run("getitem", lambda: t4[:, 1:, ::2], [], [t4])
    run("pad_roll", lambda: T.roll(T.pad(t4, ((0, 0), (0, 0), (1, 2), (0, 3))), (-1, 2), (2, 3)), [], [t4])
    run("concat", lambda: T.concat([a, a * 2.0, m1[0]], axis=0), [], [a, m1])
    table = named("table", rng.normal(size=(5, 3)))
    idx = rng.integers(0, 5, size=(4, 4))
    run("take", lambda: T.take(table, idx), [table], [])

    x2 = _inp(rng, 2, 5, 6)
    w, bias = named("weight", rng.normal(size=(6, 3))), named("bias", rng.normal(size=3))
    run("linear", lambda: F.linear(x2, w, bias), [w, bias], [x2])

    x = _inp(rng, 2, 3, 7, 6)
    cw, cb = named("weight", rng.normal(size=(4, 3, 3, 3))), named("bias", rng.normal(size=4))
    run("conv2d_same", lambda: F.conv2d(x, cw, cb, 1, 1), [cw, cb], [x])
    run("conv2d_stride2", lambda: F.conv2d(x, cw, None, 2, 1), [cw], [x])
    pw = named("weight", rng.normal(size=(5, 3, 1, 1)))
    run("conv2d_pointwise", lambda: F.conv2d(x, pw, None, 1, 0), [pw], [x])
    for k, stride in ((3, 1), (5, 1), (3, 2), (1, 1)):
        dw, db = named("weight", rng.normal(size=(3, 1, k, k))), named("bias", rng.normal(size=3))
        run(f"dwconv2d_k{k}_s{stride}", lambda dw=dw, db=db, k=k, s=stride: F.dwconv2d(x, dw, db, s, k // 2), [dw, db], [x])

    g, be = named("gamma", rng.normal(size=6)), named("beta", rng.normal(size=6))
    run("layer_norm", lambda: F.layer_norm(x2, g, be), [g, be], [x2])
    g3, b3 = named("gamma", rng.normal(size=3)), named("beta", rng.normal(size=3))
    run("batch_norm_train", lambda: F.batch_norm(x, g3, b3, None, None, True)[0], [g3, b3], [x])
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    run("batch_norm_eval", lambda: F.batch_norm(x, g3, b3, rm, rv, False)[0], [g3, b3], [x])
    run("gelu", lambda: F.gelu(x2 * 2.0), [], [x2])
    run("sigmoid", lambda: F.sigmoid(x2 * 2.0), [], [x2])
    run("softmax", lambda: F.softmax(x2 * 2.0, axis=-1), [], [x2])
    run("global_avg_pool", lambda: F.global_avg_pool(x), [], [x])
    labels = rng.integers(0, 6, size=10)
    logits = _inp(rng, 10, 6)
    run("cross_entropy", lambda: cross_entropy(logits, labels) * 3.0, [], [logits])

    xw = _inp(rng, 2, 3, 5, 8)
    for shift in (0, 1):
        run(
            f"window_roundtrip_shift{shift}",
            lambda s=shift: window_reverse(window_partition(xw, 3, s)[0] * 2.0, window_partition(xw, 3, s)[1]),
            [],
            [xw],
        )
    for shift, gated in ((0, False), (1, True)):
        attn = randomize(WindowAttention(WmsaConfig(4, 2, 3), rng).name_parameters(), rng)
        feats = _inp(rng, 2, 4, 5, 4)
        gate = _inp(rng, 2, 4)

        def fn(attn=attn, feats=feats, gate=gate, shift=shift, gated=gated):
            win, layout, mask = window_partition(feats, 3, shift)
            return window_reverse(wmsa_forward(win, attn, mask, F.sigmoid(gate) if gated else None), layout)

        run(f"wmsa_shift{shift}_gate{int(gated)}", fn, attn.parameters(), [feats] + ([gate] if gated else []))

    for training in (False, True):
        mode = "train" if training else "eval"
        ci = randomize(ChannelInteraction(6, 4, 2, rng).name_parameters(), rng).train(training)
        feat = _inp(rng, 4, 6, 5, 5)
        run(f"channel_interaction_{mode}", lambda ci=ci, feat=feat: ci(feat), ci.parameters(), [feat])
        si = randomize(SpatialInteraction(6, 2, rng).name_parameters(), rng).train(training)
        run(f"spatial_interaction_{mode}", lambda si=si, feat=feat: si(feat), si.parameters(), [feat])

    for dw in (False, True):
        ffn = randomize(FFN(4, 8, dw, rng).name_parameters(), rng)
        tok = _inp(rng, 2, 12, 4)
        run(f"ffn_dwconv{int(dw)}", lambda ffn=ffn, tok=tok: ffn(tok, 3, 4), ffn.parameters(), [tok])
    return results


def block_grid() -> list:
    """Both modes times every combination of the five block flags."""
    configs = []
    for mode in ("parallel", "successive"):
        for values in itertools.product((False, True), repeat=len(BLOCK_FLAGS)):
            configs.append(MixingBlockConfig(dim=8, num_heads=2, window_size=3, mode=mode, **dict(zip(BLOCK_FLAGS, values))))
    return configs


def block_label(cfg: MixingBlockConfig) -> str:
    flags = "".join("1" if getattr(cfg, f) else "0" for f in BLOCK_FLAGS)
    return f"block_{cfg.mode}_k{cfg.dwconv_kernel}_w{cfg.window_size}_{flags}"


def check_block(cfg: MixingBlockConfig, seed: int = 0, epsilon: float = 1e-5, tol: float = 1e-4,
                size: tuple = (5, 5), max_entries: int | None = 5):
    """Eval-mode gradcheck of one randomized block on a (2, H*W, D) input."""
    rng = np.random.default_rng(seed)
    block = randomize(MixingBlock(cfg, rng).name_parameters(), rng).eval()
    h, w = size
    x = _inp(rng, 2, h * w, cfg.dim)
    f = _scalar(lambda: block(x, h, w), rng)
    return finite_difference_check(f, block.parameters(), epsilon, tol, inputs=[x], max_entries=max_entries, seed=seed)


def block_checks(seed: int = 0, epsilon: float = 1e-5, tol: float = 1e-4, max_entries: int | None = 5) -> list:
    return [(block_label(cfg), check_block(cfg, seed, epsilon, tol, max_entries=max_entries)) for cfg in block_grid()]


MICRO_GRAD_MODEL = ModelConfig(
    base_channels=8, blocks=(1, 1, 1, 1), heads=(1, 1, 2, 2), num_classes=3, input_resolution=(32, 32), proj_dim=16
)


def model_checks(seed: int = 0, epsilon: float = 1e-5, tol: float = 1e-4, max_entries: int | None = 4) -> list:
    results = []
    for mode in ("parallel", "successive"):
        cfg = replace(MICRO_GRAD_MODEL, block=replace(MICRO_GRAD_MODEL.block, mode=mode))
        rng = np.random.default_rng(seed)
        model = randomize(build_model(cfg, seed=seed), rng).eval()
        x = _inp(rng, 2, 3, 32, 32)
        labels = rng.integers(0, cfg.num_classes, size=2)
        f = lambda model=model, x=x, labels=labels: cross_entropy(model(x), labels)  # noqa: E731
        report = finite_difference_check(f, model.parameters(), epsilon, tol, inputs=[x], max_entries=max_entries, seed=seed)
        results.append((f"model_{mode}", report))
    return results


def run_scope(scope: str, seed: int = 0, tol: float = 1e-4, epsilon: float = 1e-5) -> list:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    return {"op": op_checks, "block": block_checks, "model": model_checks}[scope](seed, epsilon, tol)
