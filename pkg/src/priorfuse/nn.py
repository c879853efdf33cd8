"""Parameter containers and the small layers the fusion blocks are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor owned by a module. Frozen parameters have ``requires_grad`` off."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class: parameters are ``Parameter`` attributes.

    Sub-modules may be attributes or lists of modules. Parameter names are dotted
    attribute paths; a tensor reachable by several paths is reported once, under
    the first path in attribute-definition order.
    """

    def named_parameters(self, prefix: str = "", seen: set[int] | None = None) -> Iterator[tuple[str, Tensor]]:
        seen = set() if seen is None else seen
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into the parameters; raises ConfigurationError on the first mismatch."""
        expected = list(self.named_parameters())
        for name, p in expected:
            if name not in state:
                raise ConfigurationError(f"parameter block {name!r} missing from state")
            if tuple(state[name].shape) != p.shape:
                raise ConfigurationError(
                    f"parameter block {name!r} has shape {tuple(state[name].shape)}, expected {p.shape}")
        extra = sorted(set(state) - {n for n, _ in expected})
        if extra:
            raise ConfigurationError(f"unexpected parameter block {extra[0]!r} in state")
        for name, p in expected:
            p.data = np.array(state[name], dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data: np.ndarray, dtype) -> Parameter:
    return Parameter(np.asarray(data), dtype=dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32,
                 std: float | None = None, zero: bool = False):
        s = 1.0 / np.sqrt(n_in) if std is None else std
        w = np.zeros((n_out, n_in)) if zero else rng.normal(0.0, s, (n_out, n_in))
        self.weight = param(w, dtype)
        self.bias = param(np.zeros(n_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype=np.float32,
                 stride: int = 1, padding: int | None = None, groups: int = 1, zero: bool = False):
        fan_in = (c_in // groups) * k * k
        shape = (c_out, c_in // groups, k, k)
        w = np.zeros(shape) if zero else rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        self.weight = param(w, dtype)
        self.bias = param(np.zeros(c_out), dtype)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm(Module):
    """Layer normalisation over one axis (channels of a feature map by default)."""

    def __init__(self, n: int, dtype=np.float32, axis: int = 1, eps: float = 1e-5):
        self.gain = param(np.ones(n), dtype)
        self.shift = param(np.zeros(n), dtype)
        self.axis = axis
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift, self.eps, self.axis)


class MLP(Module):
    """Two affine maps with GELU in between."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_last: bool = False):
        self.fc1 = Linear(n_in, n_hidden, rng, dtype)
        self.fc2 = Linear(n_hidden, n_out, rng, dtype, zero=zero_last)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
