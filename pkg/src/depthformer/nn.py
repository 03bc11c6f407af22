"""Parameter containers: a tiny ``Module`` that walks its attributes for parameters."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, conv2d, linear


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = [n for n in own if n not in state]
        unknown = [n for n in state if n not in own]
        if missing or unknown:
            raise KeyError(f"state mismatch: missing={missing} unknown={unknown}")
        bad = [f"{n}: {state[n].shape} vs {p.shape}" for n, p in own.items() if state[n].shape != p.shape]
        if bad:
            raise ValueError("incompatible tensor shapes: " + "; ".join(bad))
        for n, p in own.items():
            p.data[...] = state[n]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """Affine map with weight stored (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0):
        self.weight = Parameter(rng.normal(0.0, gain / np.sqrt(n_in), (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, gain: float = np.sqrt(2.0)):
        self.weight = Parameter(rng.normal(0.0, gain / np.sqrt(cin * k * k), (cout, cin, k, k)))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNormParams(Module):
    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))


def zero_(module: Module) -> Module:
    for p in module.parameters():
        p.data[...] = 0.0
    return module
