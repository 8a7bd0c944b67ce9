"""Flat unconstrained parameter vectors with named blocks.

Positive parameters are carried on the log scale; the assemblers add the
change-of-variables Jacobian when applying natural-scale priors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRANSFORMS = ("identity", "log")


@dataclass(frozen=True)
class Block:
    name: str
    size: int
    transform: str = "identity"

    def __post_init__(self) -> None:
        if self.size < 0:
            raise ValueError(f"block {self.name!r} has negative size")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")


class Layout:
    """Ordered named blocks inside a flat parameter vector."""

    def __init__(self, blocks: list[Block]):
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        self.blocks = tuple(b for b in blocks if b.size > 0)
        self._slices: dict[str, slice] = {}
        offset = 0
        for b in self.blocks:
            self._slices[b.name] = slice(offset, offset + b.size)
            offset += b.size
        self.size = offset

    def __contains__(self, name: str) -> bool:
        return name in self._slices

    def sl(self, name: str) -> slice:
        return self._slices[name]

    def raw(self, theta: np.ndarray, name: str) -> np.ndarray:
        return theta[self._slices[name]]

    def constrained(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for b in self.blocks:
            v = theta[self._slices[b.name]]
            out[b.name] = np.exp(v) if b.transform == "log" else v.copy()
        return out

    def pack(self, values: dict[str, np.ndarray]) -> np.ndarray:
        """Inverse of :meth:`constrained` for a full set of block values."""
        theta = np.zeros(self.size)
        for b in self.blocks:
            v = np.atleast_1d(np.asarray(values[b.name], dtype=float))
            if v.shape != (b.size,):
                raise ValueError(f"block {b.name!r} expects size {b.size}")
            theta[self._slices[b.name]] = np.log(v) if b.transform == "log" else v
        return theta

    def parameter_names(self) -> list[str]:
        names = []
        for b in self.blocks:
            if b.size == 1:
                names.append(b.name)
            else:
                names.extend(f"{b.name}[{i}]" for i in range(b.size))
        return names


@dataclass
class ParamVector:
    """A point in parameter space tied to its layout."""

    layout: Layout
    theta: np.ndarray    # unconstrained

    def constrained(self) -> dict[str, np.ndarray]:
        return self.layout.constrained(self.theta)

    def get(self, name: str) -> np.ndarray:
        return self.constrained()[name]


class GradAccumulator:
    """Mutable gradient buffer with named-slice addition."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self.grad = np.zeros(layout.size)

    def add(self, name: str, value) -> None:
        self.grad[self.layout.sl(name)] += value
