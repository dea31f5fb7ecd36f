"""Parameter containers: a small module tree plus the standard layers."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Base class; parameters, buffers and children are discovered from attributes.

    Children may be stored directly or in plain lists. Buffers are numpy
    arrays named in ``_buffers`` (saved with the weights, never trained).
    """

    _buffers: tuple = ()
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def direct_parameters(self):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield name, value

    def named_parameters(self, prefix: str = ""):
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod.direct_parameters():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for mod_name, mod in self.named_modules(prefix):
            for name in mod._buffers:
                yield (f"{mod_name}.{name}" if mod_name else name), getattr(mod, name)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def name_parameters(self) -> "Module":
        for name, p in self.named_parameters():
            p.name = name
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, dtype=np.float64) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        expected = dict(self.named_parameters())
        buffers = {name for name, _ in self.named_buffers()}
        missing = (set(expected) | buffers) - set(state)
        extra = set(state) - set(expected) - buffers
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in expected.items():
            p.assign(state[name])
        owners = dict(self.named_modules())
        for name in buffers:
            mod_name, _, attr = name.rpartition(".")
            current = getattr(owners[mod_name], attr)
            value = np.array(state[name], dtype=np.float64)
            if value.shape != current.shape:
                raise ValueError(f"{name}: shape {value.shape} != {current.shape}")
            setattr(owners[mod_name], attr, value)


def _trunc_normal(rng, shape, std=0.02) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def _conv_init(rng, shape, fan_out) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    return rng.normal(0.0, np.sqrt(2.0 / fan_out), size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(_trunc_normal(rng, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding=None, bias: bool = True, rng=None):
        self.spec = F.Conv2dSpec(c_in, c_out, kernel, stride, padding)
        self.weight = Parameter(_conv_init(rng, self.spec.weight_shape, kernel * kernel * c_out))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.pad)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int, stride: int = 1, padding=None, bias: bool = True, rng=None):
        self.spec = F.Conv2dSpec(channels, channels, kernel, stride, padding, depthwise=True)
        self.weight = Parameter(_conv_init(rng, self.spec.weight_shape, kernel * kernel))
        self.bias = Parameter(np.zeros(channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.dwconv2d(x, self.weight, self.bias, self.spec.stride, self.spec.pad)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: Tensor) -> Tensor:
        out, (mean, var) = F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )
        if self.training:
            self.running_mean, self.running_var = mean, var
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim, self.eps = dim, eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)
