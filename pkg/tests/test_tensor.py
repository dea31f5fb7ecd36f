import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixformer import tensor as T
from mixformer.gradcheck import NondeterministicError, finite_difference_check, relative_error
from mixformer.tensor import Parameter, Tensor, no_grad


def naive_matmul(a, b):
    m, k = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_add_and_mul_examples():
    assert np.array_equal((Tensor([1, 2]) + Tensor([3, 4])).data, [4, 6])
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal((x * T.ones_like(x)).data, x.data)
    assert (Tensor(np.zeros((2, 3))) + Tensor(np.ones((1, 3)))).shape == (2, 3)


def test_broadcast_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(3, 2\).*\(2, 3\)"):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))


def test_shapes_must_be_positive():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_matmul_examples(rng):
    a = rng.normal(size=(2, 2))
    assert np.array_equal((Tensor(np.eye(2)) @ Tensor(a)).data, a)
    assert np.array_equal((Tensor([[1, 2], [3, 4]]) @ Tensor([[1], [1]])).data, [[3], [7]])
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 6))
    assert np.abs((Tensor(a) @ Tensor(b)).data - naive_matmul(a, b)).max() < 1e-12


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


def test_backward_examples():
    x = Parameter([0.0, 0.0, 0.0])
    x.sum().backward()
    assert np.array_equal(x.grad, [1, 1, 1])
    y = Parameter([1.0, 2.0])
    (y * y).sum().backward()
    assert np.array_equal(y.grad, [2, 4])


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (Parameter([1.0, 2.0]) * 2.0).backward()


def test_gradients_accumulate_until_reset():
    x = Parameter([1.0, 2.0])
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.array_equal(x.grad, [6, 6])
    x.zero_grad()
    assert np.array_equal(x.grad, [0, 0])


def test_two_paths_sum(rng):
    x = Parameter(rng.normal(size=(3, 4)))
    (T.exp(x).sum() + (x * x).sum()).backward()
    both = x.grad.copy()
    x.zero_grad()
    T.exp(x).sum().backward()
    first = x.grad.copy()
    x.zero_grad()
    (x * x).sum().backward()
    assert np.allclose(both, first + x.grad, rtol=0, atol=1e-14)


def test_no_grad_records_nothing():
    x = Parameter([1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad


def test_data_is_read_only(rng):
    t = Tensor(rng.normal(size=3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
    arrays(np.float64, (4,), elements=st.floats(-5, 5)),
)
def test_ops_do_not_mutate_inputs(a, b):
    x, y = Tensor(a), Tensor(b)
    before = (x.data.tobytes(), y.data.tobytes())
    out = T.concat([x * y + y, T.exp(x) - x / (T.exp(y) + 1.0)], axis=0)
    assert np.isfinite(out.data).all()
    assert (x.data.tobytes(), y.data.tobytes()) == before


def test_linear_map_gradcheck_is_tight(rng):
    w = Parameter(rng.normal(size=(3, 4)), name="w")
    x = Tensor(rng.normal(size=(4, 2)))
    report = finite_difference_check(lambda: (w @ x).sum(), [w], floor=1e-8)
    assert report.max_error < 1e-9 and report.passed


def test_composite_graph_gradcheck(rng):
    x = Parameter(rng.normal(size=(3, 4)), name="x")
    w = Parameter(rng.normal(size=(4, 2)), name="w")
    report = finite_difference_check(lambda: (T.exp((x @ w) * 0.3) * (x @ w)).sum(), [w], inputs=[x])
    assert report.max_error < 1e-6


def test_gradcheck_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        finite_difference_check(lambda: Tensor(1.0), [], epsilon=0)


def test_gradcheck_detects_nondeterminism():
    counter = iter(range(100))
    with pytest.raises(NondeterministicError):
        finite_difference_check(lambda: Tensor(float(next(counter))), [])


def test_gradcheck_reports_wrong_gradient(rng):
    x = Parameter(rng.normal(size=3), name="x")

    def bad_square(a):
        return Tensor._from_op(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    report = finite_difference_check(lambda: bad_square(x).sum(), [x])
    assert not report.passed
    assert report.worst()[0] == "x"


def test_relative_error_floor():
    assert relative_error(1e-11, 0.0) < 1e-7
    assert relative_error(1e-11, 0.0, floor=1e-8) > 1e-4
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
