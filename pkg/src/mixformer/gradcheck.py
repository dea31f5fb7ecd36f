"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


GRAD_FLOOR = 1e-3


class NondeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    param_errors: dict = field(default_factory=dict)
    input_errors: dict = field(default_factory=dict)
    epsilon: float = 1e-5
    tol: float = 1e-4
    checked: int = 0

    @property
    def max_error(self) -> float:
        errs = list(self.param_errors.values()) + list(self.input_errors.values())
        return max(errs, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def worst(self) -> tuple:
        merged = {**self.param_errors, **{f"input:{k}": v for k, v in self.input_errors.items()}}
        if not merged:
            return ("", 0.0)
        name = max(merged, key=merged.get)
        return name, merged[name]

    def summary(self) -> str:
        name, err = self.worst()
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} max_rel_err={err:.3e} ({name}) entries={self.checked} eps={self.epsilon:g} tol={self.tol:g}"


def relative_error(a, b, floor: float = GRAD_FLOOR) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, floor)``: relative for large values, absolute near zero.

    The floor keeps round-off in the difference quotient (about 1e-10 at
    epsilon 1e-5) from counting as a relative error on gradients that are
    exactly zero, such as a bias feeding a batch norm.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _eval(f) -> float:
    out = f()
    value = out.data if isinstance(out, Tensor) else np.asarray(out)
    if value.size != 1:
        raise ValueError(f"gradcheck function must return a scalar, got shape {value.shape}")
    return float(value.reshape(-1)[0])


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
    tol: float = 1e-4,
    inputs: Sequence[Parameter] = (),
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = GRAD_FLOOR,
) -> GradCheckReport:
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` is re-evaluated after each perturbation, so it must read the
    current values of ``params``/``inputs``. ``max_entries`` caps how many
    coordinates per tensor are probed (chosen uniformly without
    replacement); ``None`` probes all of them. ``floor`` is the smallest
    denominator of the relative error (see :func:`relative_error`).
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    tensors = [(p, False) for p in params] + [(x, True) for x in inputs]
    names = _unique_names(tensors)

    first, second = _eval(f), _eval(f)
    if first != second:
        raise NondeterministicError(f"function is not deterministic: {first!r} != {second!r}")

    for t, _ in tensors:
        t.grad = np.zeros(t.shape)
    root = f()
    root.backward()
    analytic = [t.grad.copy() for t, _ in tensors]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(epsilon=epsilon, tol=tol)
    for (t, is_input), name, grad in zip(tensors, names, analytic):
        base = t.data.copy()
        flat_idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            flat_idx = np.sort(rng.choice(base.size, size=max_entries, replace=False))
        worst = 0.0
        for i in flat_idx:
            idx = np.unravel_index(i, base.shape)
            up, down = base.copy(), base.copy()
            up[idx] += epsilon
            down[idx] -= epsilon
            _set(t, up)
            f_up = _eval(f)
            _set(t, down)
            f_down = _eval(f)
            numeric = (f_up - f_down) / (2 * epsilon)
            worst = max(worst, float(relative_error(grad[idx], numeric, floor)))
        _set(t, base)
        report.checked += len(flat_idx)
        (report.input_errors if is_input else report.param_errors)[name] = worst
    return report


def _set(t: Tensor, arr: np.ndarray) -> None:
    arr = arr.copy()
    arr.flags.writeable = False
    t.data = arr


def _unique_names(tensors) -> list:
    names, seen = [], {}
    for i, (t, _) in enumerate(tensors):
        name = getattr(t, "name", "") or f"tensor{i}"
        if name in seen:
            seen[name] += 1
            name = f"{name}#{seen[name]}"
        else:
            seen[name] = 0
        names.append(name)
    return names
