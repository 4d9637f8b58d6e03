"""Right-hand sides ``f`` given as densities on a box."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Box

LOAD_KINDS = ("constant", "sine", "polynomial")


@dataclass(frozen=True)
class Load:
    """Load density.

    ``constant``: ``f = value``.
    ``sine``: ``f = value * prod_i sin(pi (x_i - lo_i) / L_i)``.
    ``polynomial``: ``f = sum c * prod_i x_i**p_i`` over ``terms = ((c, (p_0, ...)), ...)``.
    """

    kind: str = "constant"
    value: float = 1.0
    terms: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")

    def density(self, x: np.ndarray, domain: Box) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        if self.kind == "sine":
            lo, sides = np.array(domain.lower), domain.sides
            return self.value * np.prod(np.sin(math.pi * (x - lo) / sides), axis=-1)
        out = np.zeros(x.shape[:-1])
        for coeff, powers in self.terms:
            out = out + coeff * np.prod(x ** np.asarray(powers, dtype=float), axis=-1)
        return out

    def is_zero(self) -> bool:
        if self.kind == "polynomial":
            return all(c == 0 for c, _ in self.terms)
        return self.value == 0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value}
        if self.terms:
            out["terms"] = [[c, list(p)] for c, p in self.terms]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Load":
        terms = tuple((float(c), tuple(int(v) for v in p)) for c, p in d.get("terms", ()))
        return cls(kind=d.get("kind", "constant"), value=float(d.get("value", 1.0)), terms=terms)


def sine_load(dim: int) -> Load:
    """Load whose Laplace solution on the unit box is ``prod_i sin(pi x_i)``."""
    return Load("sine", dim * math.pi**2)
