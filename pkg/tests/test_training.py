import math

import numpy as np
import pytest

from mixformer.tensor import Parameter, Tensor
from mixformer.training import (
    AdamWState,
    SyntheticDataset,
    TrainConfig,
    adamw_step,
    cross_entropy,
    learning_rate,
)


def naive_cross_entropy(logits, labels):
    total = 0.0
    for row, label in zip(logits.tolist(), labels.tolist()):
        top = max(row)
        z = sum(math.exp(v - top) for v in row)
        total += -(row[label] - top - math.log(z))
    return total / len(labels)


def test_cross_entropy_examples(rng):
    assert cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 2])).item() == pytest.approx(math.log(4), abs=1e-15)
    logits = np.zeros((2, 4))
    logits[[0, 1], [1, 3]] = 30.0
    assert cross_entropy(Tensor(logits), np.array([1, 3])).item() < 1e-12
    logits = rng.normal(scale=4, size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    assert abs(cross_entropy(Tensor(logits), labels).item() - naive_cross_entropy(logits, labels)) < 1e-12


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, -1]))


def test_adamw_zero_grad_no_decay_is_fixed_point():
    p = Parameter(np.array([1.0, -2.0]))
    cfg = TrainConfig(weight_decay=0.0, warmup_steps=0)
    adamw_step([p], [np.zeros(2)], AdamWState.zeros_like([p]), cfg, 0)
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adamw_hand_step():
    p = Parameter(np.array([1.0]))
    cfg = TrainConfig(lr=0.1, weight_decay=0.0, warmup_steps=0, cosine=False)
    adamw_step([p], [np.array([1.0])], AdamWState.zeros_like([p]), cfg, 0)
    # m_hat = 1, v_hat = 1
    assert p.data[0] == pytest.approx(1 - 0.1 * 1 / (1 + 1e-8), abs=1e-15)


def test_adamw_decay_only():
    p = Parameter(np.array([2.0, -4.0]))
    cfg = TrainConfig(lr=0.1, weight_decay=0.5, warmup_steps=0, cosine=False)
    adamw_step([p], [np.zeros(2)], AdamWState.zeros_like([p]), cfg, 0)
    assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.5), rtol=0, atol=1e-15)
    q = Parameter(np.array([2.0]))
    adamw_step([q], [np.zeros(1)], AdamWState.zeros_like([q]), cfg, 0, decay=[False])
    assert q.data[0] == 2.0


def test_adamw_multi_step_matches_hand_loop(rng):
    p = Parameter(rng.normal(size=3))
    cfg = TrainConfig(lr=0.01, weight_decay=0.1, warmup_steps=2, steps=6)
    ref = p.data.copy()
    m = v = np.zeros(3)
    state = AdamWState.zeros_like([p])
    for t in range(6):
        g = rng.normal(size=3)
        adamw_step([p], [g], state, cfg, t)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        lr = learning_rate(cfg, t)
        ref = ref * (1 - lr * 0.1) - lr * (m / (1 - 0.9 ** (t + 1))) / (np.sqrt(v / (1 - 0.999 ** (t + 1))) + 1e-8)
    assert np.allclose(p.data, ref, rtol=0, atol=1e-14)


def test_adamw_shape_mismatch():
    p = Parameter(np.zeros(3))
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(2)], AdamWState.zeros_like([p]), TrainConfig(), 0)
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(3)], AdamWState([np.zeros(2)], [np.zeros(2)]), TrainConfig(), 0)


def test_schedule():
    cfg = TrainConfig(lr=1.0, warmup_steps=4, steps=104, min_lr=0.0)
    assert [learning_rate(cfg, s) for s in range(4)] == [0.25, 0.5, 0.75, 1.0]
    assert learning_rate(cfg, 54) == pytest.approx(0.5)
    assert learning_rate(cfg, 104) == pytest.approx(0.0)
    flat = TrainConfig(lr=0.3, warmup_steps=0, cosine=False)
    assert learning_rate(flat, 400) == 0.3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_dataset_deterministic_and_balanced():
    ds = SyntheticDataset(seed=3, samples_per_class=5)
    x1, y1 = ds.arrays()
    x2, y2 = SyntheticDataset(seed=3, samples_per_class=5).arrays()
    assert x1.shape == (20, 3, 56, 56)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert np.bincount(y1).tolist() == [5, 5, 5, 5]
    assert not np.array_equal(x1, SyntheticDataset(seed=4, samples_per_class=5).arrays()[0])
