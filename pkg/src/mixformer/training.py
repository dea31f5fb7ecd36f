"""AdamW, cross-entropy, a synthetic pattern dataset and a small training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .backbone import MixFormer, ModelConfig, build_model
from .tensor import Parameter, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.04
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    cosine: bool = True
    warmup_steps: int = 5
    min_lr: float = 1e-6
    batch_size: int = 32
    steps: int = 500
    seed: int = 0
    eval_every: int = 10
    target_accuracy: float | None = 1.0  # stop once eval-mode train accuracy reaches this

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be >= 1")
        if self.weight_decay < 0 or self.warmup_steps < 0 or self.eval_every < 1:
            raise ValueError("weight_decay, warmup_steps must be >= 0 and eval_every >= 1")
        if not all(0 <= b < 1 for b in self.betas) or len(self.betas) != 2:
            raise ValueError(f"betas must be two values in [0, 1), got {self.betas}")


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Linear warmup then (optionally) cosine decay to ``min_lr`` at ``cfg.steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if not cfg.cosine:
        return cfg.lr
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params) -> "AdamWState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adamw_step(params, grads, state: AdamWState, cfg: TrainConfig, step: int, decay=None) -> AdamWState:
    """One AdamW update in place on ``params`` (``step`` counts from 0).

    ``decay`` is an optional per-parameter bool list selecting which
    parameters receive weight decay (all by default).
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state have different lengths")
    b1, b2 = cfg.betas
    lr = learning_rate(cfg, step)
    t = step + 1
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    decay = [True] * len(params) if decay is None else decay
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: param {p.shape}, grad {g.shape}, state {state.m[i].shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        value = p.data * (1 - lr * cfg.weight_decay) if decay[i] else p.data
        value = value - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + cfg.eps)
        p.assign(value)
    return state


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"expected (N, K) logits and (N,) labels, got {logits.shape} and {labels.shape}")
    n, k = logits.shape
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be integers in [0, {k}), got {labels}")
    logp = log_softmax(logits.data, axis=1)
    loss = -logp[np.arange(n), labels].mean()

    def _back(g):
        grad = softmax(logits.data, axis=1)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return Tensor._from_op(loss, (logits,), _back)


@dataclass(frozen=True)
class SyntheticDataset:
    """Balanced images of four pattern families plus Gaussian noise.

    Class 0: horizontal bars, 1: vertical bars, 2: diagonal stripes,
    3: a bright blob. Frequency, phase, blob position and channel tint are
    drawn per sample so no two images are identical.
    """

    seed: int = 0
    num_classes: int = 4
    samples_per_class: int = 16
    size: int = 56
    noise: float = 0.3

    def __post_init__(self):
        if not 1 <= self.num_classes <= 4:
            raise ValueError(f"num_classes must be in [1, 4], got {self.num_classes}")
        if self.samples_per_class < 1 or self.size < 8:
            raise ValueError("samples_per_class >= 1 and size >= 8 required")

    def __len__(self) -> int:
        return self.num_classes * self.samples_per_class

    def _pattern(self, label: int, rng: np.random.Generator) -> np.ndarray:
        s = self.size
        yy, xx = np.mgrid[0:s, 0:s] / s
        freq = rng.uniform(3, 6)
        phase = rng.uniform(0, 2 * np.pi)
        if label == 0:
            return np.sin(2 * np.pi * freq * yy + phase)
        if label == 1:
            return np.sin(2 * np.pi * freq * xx + phase)
        if label == 2:
            return np.sin(2 * np.pi * freq * (xx + yy) / np.sqrt(2) + phase)
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        r = rng.uniform(0.1, 0.2)
        return 2 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)) - 1

    def arrays(self) -> tuple:
        """Images (N, 3, S, S) and labels (N,), class-interleaved."""
        rng = np.random.default_rng(self.seed)
        images, labels = [], []
        for _ in range(self.samples_per_class):
            for label in range(self.num_classes):
                base = self._pattern(label, rng)
                tint = rng.uniform(0.5, 1.0, size=(3, 1, 1))
                images.append(tint * base + self.noise * rng.normal(size=(3, self.size, self.size)))
                labels.append(label)
        return np.stack(images), np.array(labels)


MICRO_MODEL = ModelConfig(
    base_channels=16, blocks=(1, 1, 2, 1), heads=(1, 2, 4, 8), num_classes=4, input_resolution=(56, 56)
)


@dataclass
class TrainResult:
    losses: list
    accuracies: list = field(default_factory=list)  # (step, eval-mode train accuracy)
    model: MixFormer | None = None

    @property
    def train_accuracy(self) -> float:
        return self.accuracies[-1][1] if self.accuracies else float("nan")

    @property
    def steps(self) -> int:
        return len(self.losses)

    def metrics(self) -> dict:
        return {
            "steps": self.steps,
            "initial_loss": self.losses[0],
            "final_loss": self.losses[-1],
            "train_accuracy": self.train_accuracy,
            "loss_curve": self.losses,
            "accuracy_curve": [list(a) for a in self.accuracies],
        }


def accuracy(model: MixFormer, images: np.ndarray, labels: np.ndarray, batch: int = 64) -> float:
    model.eval()
    correct = 0
    with no_grad():
        for i in range(0, len(labels), batch):
            logits = model(Tensor(images[i : i + batch])).data
            correct += int((logits.argmax(axis=1) == labels[i : i + batch]).sum())
    model.train()
    return correct / len(labels)


def decays(model: MixFormer) -> list:
    """Weight decay applies to matrices and kernels, not to biases, norms or bias tables."""
    return [p.ndim >= 2 and "relative_position_bias_table" not in p.name for p in model.parameters()]


def train_toy(
    model_cfg: ModelConfig = MICRO_MODEL, train_cfg: TrainConfig | None = None, dataset: SyntheticDataset | None = None
) -> TrainResult:
    train_cfg = train_cfg or TrainConfig()
    dataset = dataset or SyntheticDataset(seed=train_cfg.seed)
    images, labels = dataset.arrays()
    if model_cfg.num_classes != dataset.num_classes:
        raise ValueError(f"model has {model_cfg.num_classes} classes, dataset {dataset.num_classes}")
    model = build_model(model_cfg, seed=train_cfg.seed).train()
    params = model.parameters()
    decay = decays(model)
    state = AdamWState.zeros_like(params)
    rng = np.random.default_rng(train_cfg.seed + 1)
    result = TrainResult([], model=model)
    n = len(labels)
    bs = min(train_cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    for step in range(train_cfg.steps):
        if cursor + bs > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor : cursor + bs]
        cursor += bs
        model.zero_grad()
        loss = cross_entropy(model(Tensor(images[idx])), labels[idx])
        loss.backward()
        adamw_step(params, [p.grad for p in params], state, train_cfg, step, decay)
        result.losses.append(loss.item())
        log.debug("step %d loss %.5f", step, result.losses[-1])
        last = step == train_cfg.steps - 1
        if (step + 1) % train_cfg.eval_every == 0 or last:
            acc = accuracy(model, images, labels)
            result.accuracies.append((step + 1, acc))
            log.info("step %d loss %.4f train accuracy %.4f", step + 1, result.losses[-1], acc)
            if train_cfg.target_accuracy is not None and acc >= train_cfg.target_accuracy:
                break
    model.eval()
    return result
