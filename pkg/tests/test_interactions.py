import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixformer.checks import randomize
from mixformer.interactions import ChannelInteraction, SpatialInteraction, hidden_channels
from mixformer.tensor import Tensor


def test_hidden_channels():
    assert hidden_channels(16, 4) == 4
    assert hidden_channels(3, 4) == 1


def test_zero_init_gates_are_half(rng):
    x = Tensor(rng.normal(size=(2, 8, 5, 5)))
    ci = ChannelInteraction(8, 6).eval()
    si = SpatialInteraction(8).eval()
    assert ci(x).shape == (2, 6) and np.all(ci(x).data == 0.5)
    assert si(x).shape == (2, 1, 5, 5) and np.all(si(x).data == 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 20))
def test_gates_bounded_and_shrink(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=scale, size=(2, 8, 4, 4))
    ci = randomize(ChannelInteraction(8, 8, 4, rng).name_parameters(), rng).eval()
    si = randomize(SpatialInteraction(8, 4, rng).name_parameters(), rng).eval()
    for gate in (ci(Tensor(x)).data, si(Tensor(x)).data):
        assert np.all((gate > 0) & (gate < 1))
    gated = x * si(Tensor(x)).data
    assert np.all(np.abs(gated) <= np.abs(x))


def test_channel_gate_ignores_spatial_order(rng):
    ci = randomize(ChannelInteraction(6, 4, 2, rng).name_parameters(), rng).eval()
    x = rng.normal(size=(2, 6, 4, 5))
    flat = x.reshape(2, 6, 20)[:, :, rng.permutation(20)].reshape(2, 6, 4, 5)
    assert np.allclose(ci(Tensor(x)).data, ci(Tensor(flat)).data, rtol=0, atol=1e-15)


def test_channel_gate_of_constant_map_uses_loop_mean(rng):
    ci = randomize(ChannelInteraction(3, 3, 1, rng).name_parameters(), rng).eval()
    consts = rng.normal(size=(1, 3))
    x = np.broadcast_to(consts[:, :, None, None], (1, 3, 4, 4)).copy()
    loop_mean = np.array([[sum(x[0, c].ravel()) / 16 for c in range(3)]])
    assert np.allclose(loop_mean, consts, rtol=0, atol=1e-15)
    small = np.broadcast_to(loop_mean[:, :, None, None], (1, 3, 1, 1)).copy()
    assert np.allclose(ci(Tensor(x)).data, ci(Tensor(small)).data, rtol=0, atol=1e-15)


def test_spatial_gate_keeps_size(rng):
    si = SpatialInteraction(4, 4, rng)
    assert si(Tensor(rng.normal(size=(1, 4, 7, 3)))).shape == (1, 1, 7, 3)


@pytest.mark.parametrize("training", [False, True])
def test_gate_gradcheck(rng, training):
    from mixformer.gradcheck import finite_difference_check
    from mixformer.tensor import Parameter

    si = randomize(SpatialInteraction(4, 2, rng).name_parameters(), rng).train(training)
    x = Parameter(rng.normal(size=(2, 4, 3, 3)), name="x")
    r = Tensor(rng.normal(size=(2, 4, 3, 3)))
    report = finite_difference_check(lambda: (x * si(x) * r).sum(), si.parameters(), inputs=[x])
    assert report.passed, report.summary()
