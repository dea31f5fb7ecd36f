"""Command line entry point: ``mixformer <command> ...`` (or ``python -m mixformer``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backbone import VARIANTS, BlockTemplate, ModelConfig, build_model, get_variant
from .checks import SCOPES, check_block, run_scope
from .complexity import model_report
from .config import env_seed, load_model_config, load_train_config
from .serialization import load_tensor, load_tensors, save_model, save_tensor
from .tensor import Tensor, no_grad
from .training import train_toy

log = logging.getLogger("mixformer")

INTERACTIONS = {"none": (False, False), "channel": (True, False), "spatial": (False, True), "both": (True, True)}


class CliError(Exception):
    """A user-facing failure that maps to exit status 1."""


def _resolve_model(spec: str) -> ModelConfig:
    if spec.lower().replace("mixformer-", "") in VARIANTS:
        return get_variant(spec)
    path = Path(spec)
    if not path.exists():
        raise CliError(f"{spec!r} is neither a known variant ({', '.join(VARIANTS)}) nor a config file")
    return load_model_config(path)


def _write_report(report, out_dir: Path, stem: str, title: str) -> None:
    from .plotting import plot_complexity

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(report.to_csv())
    plot_complexity(report, out_dir / f"{stem}.png", title)
    log.info("wrote %s.csv and %s.png to %s", stem, stem, out_dir)


def cmd_analyze(args) -> int:
    cfg = _resolve_model(args.variant)
    report = model_report(build_model(cfg, seed=None), tuple(args.resolution), batch=args.batch)
    print(report.to_json() if args.json else report.to_table())
    if args.report:
        _write_report(report, Path(args.report), "complexity", args.variant)
    return 0


def cmd_gradcheck(args) -> int:
    seed = env_seed() if args.seed is None else args.seed
    results = run_scope(args.scope, seed=seed, tol=args.tol, epsilon=args.epsilon)
    width = max(len(name) for name, _ in results)
    for name, report in results:
        print(f"{name:<{width}}  {report.summary()}")
    failed = [name for name, r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def config_from_state(state: dict, num_heads=None) -> ModelConfig:
    """Recover a :class:`ModelConfig` from parameter names and shapes.

    Head counts come from the relative position bias tables; models
    without them need ``num_heads``. Window shifting leaves no trace in
    the weights and is taken as off.
    """
    def shape(name):
        if name not in state:
            raise CliError(f"weights lack {name!r}; pass --config")
        return state[name].shape

    blocks = []
    for i in range(4):
        j = 0
        while f"stages.{i}.blocks.{j}.norm1.weight" in state:
            j += 1
        blocks.append(j)
    if min(blocks) == 0:
        raise CliError("weights do not describe four stages; pass --config")
    dims = [shape(f"stages.{i}.blocks.0.norm1.weight")[0] for i in range(4)]
    b0 = "stages.0.blocks.0"
    successive = f"{b0}.proj_in.weight" in state
    table = f"{b0}.attn.relative_position_bias_table"
    heads = []
    for i in range(4):
        name = f"stages.{i}.blocks.0.attn.relative_position_bias_table"
        if name in state:
            heads.append(state[name].shape[1])
        elif num_heads is not None:
            heads.append(num_heads[i])
        else:
            raise CliError("head counts cannot be inferred without bias tables; pass --config")
    if table in state:
        window = (int(round(np.sqrt(state[table].shape[0]))) + 1) // 2
    else:
        raise CliError("window size cannot be inferred without bias tables; pass --config")
    attn_w = shape(f"{b0}.proj_attn.weight") if not successive else None
    template = BlockTemplate(
        attn_ratio=0.5 if successive else attn_w[1] / dims[0],
        window_size=window,
        dwconv_kernel=shape(f"{b0}.dwconv.weight")[-1],
        mlp_ratio=shape(f"{b0}.ffn.fc1.weight")[1] / dims[0],
        mode="successive" if successive else "parallel",
        channel_interaction=f"{b0}.channel_interaction.conv1.weight" in state,
        spatial_interaction=f"{b0}.spatial_interaction.conv1.weight" in state,
        dwconv_in_ffn=f"{b0}.ffn.dwconv.weight" in state,
        relative_position_bias=True,
    )
    explicit = None if dims == [dims[0] * 2 ** i for i in range(4)] else tuple(dims)
    head = shape("head.weight")
    return ModelConfig(dims[0], tuple(blocks), tuple(heads), num_classes=head[1], proj_dim=head[0],
                       dims=explicit, block=template)


def cmd_forward(args) -> int:
    state = load_tensors(args.weights)
    cfg = load_model_config(args.config) if args.config else config_from_state(state)
    model = build_model(cfg, seed=None)
    model.load_state_dict(state)
    model.eval()
    images = load_tensor(args.input)
    if images.ndim == 3:
        images = images[None]
    with no_grad():
        logits = model(Tensor(images)).data
    save_tensor(args.output, logits, "logits")
    print(f"logits {logits.shape} -> {args.output}")
    return 0


def cmd_train_toy(args) -> int:
    model_cfg, train_cfg, dataset = load_train_config(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
        dataset = replace(dataset, seed=args.seed)
    result = train_toy(model_cfg, train_cfg, dataset)
    print(json.dumps(result.metrics()))
    if args.save_weights:
        save_model(args.save_weights, result.model)
    if args.report:
        from .plotting import plot_training

        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["step,loss"] + [f"{i + 1},{loss!r}" for i, loss in enumerate(result.losses)]
        (out / "loss.csv").write_text("\n".join(lines) + "\n")
        plot_training(result.losses, result.accuracies, out / "training.png")
    return 0


ABLATION_SMOKE = ModelConfig(
    base_channels=16, blocks=(1, 1, 2, 1), heads=(1, 2, 4, 8), num_classes=4, input_resolution=(56, 56)
)


def ablation_template(args) -> BlockTemplate:
    channel, spatial = INTERACTIONS[args.interactions]
    return BlockTemplate(
        mode=args.mode,
        channel_interaction=channel,
        spatial_interaction=spatial,
        window_size=args.window,
        dwconv_kernel=args.dwconv_kernel,
        shifted_window=args.shifted_window,
        dwconv_in_ffn=args.dwconv_in_ffn,
    )


def cmd_ablate(args) -> int:
    template = ablation_template(args)
    base = _resolve_model(args.variant)
    full = replace(base, block=template)
    report = model_report(build_model(full, seed=None), tuple(args.resolution))
    smoke_cfg = replace(ABLATION_SMOKE, block=template)
    seed = env_seed() if args.seed is None else args.seed
    model = build_model(smoke_cfg, seed=seed).eval()
    x = np.random.default_rng(seed).normal(size=(2, 3, 56, 56))
    with no_grad():
        logits = model(Tensor(x)).data
    row = {
        "mode": args.mode,
        "interactions": args.interactions,
        "window": args.window,
        "dwconv_kernel": args.dwconv_kernel,
        "shifted_window": args.shifted_window,
        "dwconv_in_ffn": args.dwconv_in_ffn,
        "variant": args.variant,
        "params": report.total_params,
        "flops": report.total_flops,
        "smoke_logits_finite": bool(np.isfinite(logits).all()),
        "smoke_logits_shape": list(logits.shape),
    }
    ok = row["smoke_logits_finite"]
    if args.gradcheck:
        block_cfg = smoke_cfg.block_config(0, 1 if args.shifted_window else 0)
        block_cfg = replace(block_cfg, dim=8, num_heads=2, attn_dim=4)
        size = (args.window + 2, args.window + 1)
        grad = check_block(block_cfg, seed, size=size, max_entries=4)
        row["gradcheck_max_error"] = grad.max_error
        ok = ok and grad.passed
    if args.json:
        print(json.dumps(row))
    else:
        width = max(map(len, row))
        print("\n".join(f"{k:<{width}}  {v}" for k, v in row.items()))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixformer", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter and FLOPs report")
    p.add_argument("--variant", default="b1", help=f"one of {', '.join(VARIANTS)} or a model config JSON path")
    p.add_argument("--resolution", nargs=2, type=int, default=[224, 224], metavar=("H", "W"))
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.add_argument("--report", metavar="DIR", help="also write per-layer CSV and a figure to DIR")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=SCOPES, default="op")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("forward", help="classify images stored in a tensor file")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True, help="tensor file holding (N, 3, H, W) images")
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="model config JSON (otherwise inferred from the weights)")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("train-toy", help="train a small model on synthetic patterns")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--save-weights", metavar="FILE")
    p.add_argument("--report", metavar="DIR", help="write the loss curve as CSV and a figure to DIR")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("ablate", help="complexity and smoke test of one block design")
    p.add_argument("--mode", choices=("parallel", "successive"), default="parallel")
    p.add_argument("--interactions", choices=tuple(INTERACTIONS), default="both")
    p.add_argument("--dwconv-kernel", type=int, default=3)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--shifted-window", action="store_true")
    p.add_argument("--dwconv-in-ffn", action="store_true")
    p.add_argument("--variant", default="b1")
    p.add_argument("--resolution", nargs=2, type=int, default=[224, 224], metavar=("H", "W"))
    p.add_argument("--gradcheck", action="store_true", help="also gradcheck one block of this design")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
