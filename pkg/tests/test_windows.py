import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixformer.tensor import Tensor
from mixformer.windows import MASK_VALUE, make_layout, window_partition, window_reverse


def test_exact_tiling_has_no_mask(rng):
    windows, layout, mask = window_partition(Tensor(rng.normal(size=(1, 2, 14, 14))), 7)
    assert layout.num_windows == 4 and windows.shape == (4, 49, 2)
    assert not mask.any()


def test_single_window_roundtrip(rng):
    x = rng.normal(size=(2, 3, 7, 7))
    windows, layout, _ = window_partition(Tensor(x), 7)
    assert windows.shape == (2, 49, 3)
    assert np.array_equal(window_reverse(windows, layout).data, x)


def test_padding_mask_counts():
    _, layout, mask = window_partition(Tensor(np.zeros((1, 1, 10, 10))), 7)
    assert (layout.padded_height, layout.padded_width, layout.num_windows) == (14, 14, 4)
    # a padded key column is blocked for every query except itself
    padded_per_window = ((mask == MASK_VALUE).sum(axis=1) == 48).sum(axis=1)
    assert padded_per_window.tolist() == [0, 28, 28, 40]
    assert padded_per_window.sum() == 96


@pytest.mark.parametrize("shape", [(10, 10), (7, 14), (14, 14)])
@pytest.mark.parametrize("shift", [0, 3])
def test_roundtrip(rng, shape, shift):
    x = rng.normal(size=(2, 3) + shape)
    windows, layout, _ = window_partition(Tensor(x), 7, shift)
    assert np.array_equal(window_reverse(windows, layout).data, x)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3), st.booleans())
def test_ramp_permutation(h, w, k, shifted):
    shift = k // 2 if shifted else 0
    ramp = np.arange(h * w, dtype=float).reshape(1, 1, h, w) + 1
    windows, layout, mask = window_partition(Tensor(ramp), k, shift)
    values = windows.data.reshape(-1)
    assert sorted(values[values > 0].tolist()) == list(range(1, h * w + 1))
    assert np.array_equal(window_reverse(windows, layout).data, ramp)
    assert np.array_equal(mask, mask.transpose(0, 2, 1))
    pad = windows.data.reshape(layout.num_windows, -1) == 0
    either = (pad[:, :, None] | pad[:, None, :]) & ~np.eye(k * k, dtype=bool)
    assert np.all((mask == MASK_VALUE) | ~either)


def test_shift_mask_separates_wrapped_regions():
    _, layout, mask = window_partition(Tensor(np.ones((1, 1, 14, 14))), 7, 3)
    assert not mask[0].any()  # interior window only holds contiguous tokens
    assert mask[3].any()  # corner window mixes four wrapped regions
    # tokens on the diagonal may always attend to themselves
    assert np.all(np.diagonal(mask, axis1=1, axis2=2) == 0)


def test_layout_rejects_bad_shift():
    with pytest.raises(ValueError):
        make_layout(14, 14, 7, 2)


def test_reverse_rejects_inconsistent_windows():
    layout = make_layout(14, 14, 7)
    with pytest.raises(ValueError):
        window_reverse(Tensor(np.zeros((3, 49, 2))), layout)
