"""Named parameter arrays with gradient/momentum buffers and the SGD update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite gradient or loss."""


@dataclass
class Parameter:
    """One learnable array plus its gradient accumulator and momentum buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    momentum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)


class ParameterSet:
    """Ordered collection of named parameters owned by a model."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name=name, value=value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad.fill(0.0)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self._params[name]
            if p.value.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for parameter {name!r}: "
                    f"{p.value.shape} vs {arr.shape}"
                )
            p.value[...] = arr


def sgd_step(params: ParameterSet, lr: float, momentum: float = 0.0) -> None:
    """Momentum SGD: v <- momentum*v + g; p <- p - lr*v; gradients cleared.

    Raises DivergenceError naming the offending parameter when any gradient
    is non-finite.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        np.multiply(p.momentum, momentum, out=p.momentum)
        p.momentum += p.grad
        p.value -= lr * p.momentum
        p.grad.fill(0.0)
