"""Admissible flux maps ``a(x, y, xi)`` and their structural audit.

Two families are built in:

* ``linear_tensor``: ``a = c(x, y) M xi`` with a scalar cell profile ``c`` and
  a constant SPD matrix ``M`` (identity by default);
* ``nonlinear_isotropic``: ``a = c(x, y) (1 + theta(x, y) / (1 + |xi|)) xi``
  with ``theta >= 0`` (``theta = 1`` by default).

For both, pointwise strong monotonicity and Lipschitz constants are explicit
(``c M`` in the linear case; ``c`` and ``c (1 + theta)`` in the nonlinear one,
since the radial profile ``t -> (1 + theta / (1 + t)) t`` has slope in
``[1, 1 + theta]``).

The dependence on ``x`` is one of ``constant``, ``piecewise`` (axis-aligned
boxes, each carrying an x-independent spec) or ``continuous`` (a sinusoidal
modulation of either ``c`` or ``theta``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Box

FAMILIES = ("linear_tensor", "nonlinear_isotropic")
X_STRUCTURES = ("constant", "piecewise", "continuous")
PROFILE_KINDS = ("constant", "layered", "checkerboard", "smooth")

STRUCTURE_TOL = 1e-10
XI_RANGE = 10.0


class StructureError(ValueError):
    """A declared structural condition is violated."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


@dataclass(frozen=True)
class CellProfile:
    """Scalar Y-periodic profile.

    ``constant``: ``values = (v,)``.  ``layered``: ``v0`` for
    ``frac(y[axis]) < 1/2`` and ``v1`` otherwise.  ``checkerboard`` (2D):
    ``v0`` on the squares where ``floor(2 y0) + floor(2 y1)`` is even.
    ``smooth``: ``v0 + v1 sin(2 pi y[axis])``.
    """

    kind: str = "constant"
    values: tuple[float, ...] = (1.0,)
    axis: int = 0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        need = 1 if self.kind == "constant" else 2
        if len(self.values) != need:
            raise ValueError(f"{self.kind} profile needs {need} values, got {self.values}")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full(y.shape[:-1], self.values[0])
        v0, v1 = self.values
        if self.kind == "smooth":
            return v0 + v1 * np.sin(2.0 * math.pi * y[..., self.axis])
        frac = y - np.floor(y)
        if self.kind == "layered":
            return np.where(frac[..., self.axis] < 0.5, v0, v1)
        parity = np.floor(2.0 * frac[..., 0]).astype(int) + np.floor(2.0 * frac[..., 1]).astype(int)
        return np.where(parity % 2 == 0, v0, v1)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return self.values[0], self.values[0]
        if self.kind == "smooth":
            v0, v1 = self.values
            return v0 - abs(v1), v0 + abs(v1)
        return min(self.values), max(self.values)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values), "axis": self.axis}


@dataclass(frozen=True)
class XModulation:
    """Factor ``s(x) = mean + amplitude * sin(2 pi x[axis])`` applied to ``target``."""

    target: str = "c"
    mean: float = 1.0
    amplitude: float = 0.0
    axis: int = 0

    def __post_init__(self):
        if self.target not in ("c", "theta"):
            raise ValueError(f"modulation target must be 'c' or 'theta', got {self.target!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.mean + self.amplitude * np.sin(2.0 * math.pi * x[..., self.axis])

    @property
    def bounds(self) -> tuple[float, float]:
        return self.mean - abs(self.amplitude), self.mean + abs(self.amplitude)

    def to_dict(self) -> dict:
        return {"target": self.target, "mean": self.mean, "amplitude": self.amplitude, "axis": self.axis}


@dataclass(frozen=True)
class ModulusSpec:
    """Modulus of continuity ``omega(t) = L t`` or ``L t**p`` with ``p`` in (0, 1]."""

    form: str = "linear"
    L: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.form not in ("linear", "power"):
            raise ValueError(f"unknown modulus form {self.form!r}")
        if self.L < 0:
            raise ValueError("modulus constant must be non-negative")
        if self.form == "power" and not 0 < self.p <= 1:
            raise ValueError(f"power modulus exponent must lie in (0, 1], got {self.p}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "linear":
            return self.L * t
        return self.L * t**self.p

    def to_dict(self) -> dict:
        return {"form": self.form, "L": self.L, "p": self.p}


@dataclass(frozen=True)
class Part:
    box: Box
    spec: "MonotoneMapSpec"


@dataclass(frozen=True)
class MonotoneMapSpec:
    family: str
    dim: int
    alpha: float
    beta: float
    coefficient: CellProfile = field(default_factory=CellProfile)
    theta: CellProfile = field(default_factory=CellProfile)
    matrix: tuple[tuple[float, ...], ...] | None = None
    x_structure: str = "constant"
    modulation: XModulation | None = None
    parts: tuple[Part, ...] = ()
    modulus: ModulusSpec | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.x_structure not in X_STRUCTURES:
            raise ValueError(f"unknown x_structure {self.x_structure!r}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise StructureError("constants", "alpha and beta must be finite")
        if not 0 < self.alpha <= self.beta:
            raise StructureError(
                "constants", f"need 0 < alpha <= beta, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.x_structure == "piecewise":
            if not self.parts:
                raise ValueError("piecewise spec needs at least one part")
            for part in self.parts:
                if part.spec.x_structure == "piecewise":
                    raise ValueError("parts must not be piecewise themselves")
                if part.spec.family != self.family or part.spec.dim != self.dim:
                    raise ValueError("all parts must share family and dimension")
                if part.spec.matrix != self.matrix:
                    raise ValueError("all parts must share the tensor matrix")
        if self.x_structure == "continuous" and self.modulation is None:
            raise ValueError("continuous spec needs a modulation")
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=float)
            if m.shape != (self.dim, self.dim) or not np.allclose(m, m.T):
                raise ValueError("matrix must be symmetric with shape (dim, dim)")
            if np.linalg.eigvalsh(m)[0] <= 0:
                raise ValueError("matrix must be positive definite")

    @property
    def is_linear(self) -> bool:
        return self.family == "linear_tensor"

    def coefficients(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(c, theta)`` at broadcast points ``x`` and ``y`` (trailing axis = dim)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
        if self.x_structure == "piecewise":
            c = np.empty(shape)
            theta = np.empty(shape)
            idx = np.broadcast_to(self.part_index(x), shape)
            yb = np.broadcast_to(y, shape + (self.dim,))
            xb = np.broadcast_to(x, shape + (self.dim,))
            for i, part in enumerate(self.parts):
                mask = idx == i
                if np.any(mask):
                    ci, ti = part.spec.coefficients(xb[mask], yb[mask])
                    c[mask] = ci
                    theta[mask] = ti
            return c, theta
        c = np.broadcast_to(self.coefficient(y), shape)
        theta = np.broadcast_to(self.theta(y), shape)
        if self.modulation is not None:
            s = self.modulation(x)
            if self.modulation.target == "c":
                c = c * s
            else:
                theta = theta * s
        return np.broadcast_to(c, shape), np.broadcast_to(theta, shape)

    def part_index(self, x: np.ndarray) -> np.ndarray:
        """Index of the first part whose closed box holds ``x`` (-1 if none)."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], -1, dtype=int)
        for i in reversed(range(len(self.parts))):
            out = np.where(self.parts[i].box.contains(x), i, out)
        return out

    def flux(self, c: np.ndarray, theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Flux for precomputed coefficients; ``xi`` has a trailing axis of size dim."""
        if self.is_linear:
            if self.matrix is not None:
                xi = xi @ np.asarray(self.matrix).T
            return c[..., None] * xi
        norm = np.sqrt(np.sum(xi * xi, axis=-1))
        return (c * (1.0 + theta / (1.0 + norm)))[..., None] * xi

    def frozen_at(self, x) -> "MonotoneMapSpec":
        """The x-independent spec ``a(x, ., .)``."""
        x = np.asarray(x, dtype=float)
        if self.x_structure == "constant":
            return self
        if self.x_structure == "piecewise":
            i = int(self.part_index(x))
            if i < 0:
                raise ValueError(f"point {x} lies in no part")
            return self.parts[i].spec
        value = float(self.modulation(x))
        return replace(
            self,
            x_structure="constant",
            modulation=replace(self.modulation, mean=value, amplitude=0.0),
            modulus=None,
        )

    def to_dict(self) -> dict:
        out = {
            "family": self.family,
            "dim": self.dim,
            "alpha": self.alpha,
            "beta": self.beta,
            "coefficient": self.coefficient.to_dict(),
            "theta": self.theta.to_dict(),
            "x_structure": self.x_structure,
        }
        if self.matrix is not None:
            out["matrix"] = [list(r) for r in self.matrix]
        if self.modulation is not None:
            out["modulation"] = self.modulation.to_dict()
        if self.modulus is not None:
            out["modulus"] = self.modulus.to_dict()
        if self.parts:
            out["parts"] = [{"box": p.box.to_dict(), "spec": p.spec.to_dict()} for p in self.parts]
        return out


def natural_constants(
    family: str,
    coefficient: CellProfile,
    theta: CellProfile | None = None,
    matrix=None,
    modulation: XModulation | None = None,
) -> tuple[float, float]:
    """Pointwise (alpha, beta) of a built-in family over all x and y."""
    c_lo, c_hi = coefficient.bounds
    t_lo, t_hi = (theta or CellProfile()).bounds
    if modulation is not None:
        s_lo, s_hi = modulation.bounds
        if modulation.target == "c":
            c_lo, c_hi = min(c_lo * s_lo, c_lo * s_hi), max(c_hi * s_lo, c_hi * s_hi)
        else:
            t_lo, t_hi = min(t_lo * s_lo, t_lo * s_hi), max(t_hi * s_lo, t_hi * s_hi)
    if c_lo <= 0:
        raise StructureError("constants", f"coefficient must be positive, lower bound {c_lo}")
    if family == "linear_tensor":
        lam = np.linalg.eigvalsh(np.asarray(matrix, dtype=float)) if matrix is not None else (1.0, 1.0)
        return c_lo * float(lam[0]), c_hi * float(lam[-1])
    if t_lo < 0:
        raise StructureError("constants", f"theta must be non-negative, lower bound {t_lo}")
    return c_lo, c_hi * (1.0 + t_hi)


def suggest_modulus(spec: MonotoneMapSpec, domain: Box) -> ModulusSpec:
    """A linear modulus valid for a sinusoidally modulated built-in spec on ``domain``.

    ``|a(x1) - a(x2)| <= K |x1 - x2| |xi|`` with ``K`` from the modulation slope;
    squaring and using ``|x1 - x2| <= diam`` gives ``omega(t) = K^2 diam t``.
    """
    mod = spec.modulation
    if mod is None:
        return ModulusSpec("linear", 0.0)
    slope = 2.0 * math.pi * abs(mod.amplitude)
    c_hi = max(abs(v) for v in spec.coefficient.bounds)
    t_hi = max(abs(v) for v in spec.theta.bounds)
    if mod.target == "c":
        lam = 1.0
        if spec.matrix is not None:
            lam = float(np.linalg.eigvalsh(np.asarray(spec.matrix))[-1])
        k = slope * c_hi * (lam if spec.is_linear else 1.0 + t_hi)
    else:
        if spec.is_linear:
            return ModulusSpec("linear", 0.0)
        k = slope * c_hi * t_hi
    return ModulusSpec("linear", k * k * domain.diameter)


def make_spec(
    family: str,
    dim: int,
    coefficient: CellProfile | None = None,
    theta: CellProfile | None = None,
    matrix=None,
    modulation: XModulation | None = None,
    modulus: ModulusSpec | None = None,
    domain: Box | None = None,
    alpha: float | None = None,
    beta: float | None = None,
) -> MonotoneMapSpec:
    """Build a constant or continuous spec, filling alpha, beta and omega when omitted."""
    coefficient = coefficient or CellProfile()
    theta = theta or CellProfile()
    nat_a, nat_b = natural_constants(family, coefficient, theta, matrix, modulation)
    if matrix is not None:
        matrix = tuple(tuple(float(v) for v in row) for row in matrix)
    spec = MonotoneMapSpec(
        family=family,
        dim=dim,
        alpha=nat_a if alpha is None else alpha,
        beta=nat_b if beta is None else beta,
        coefficient=coefficient,
        theta=theta,
        matrix=matrix,
        x_structure="continuous" if modulation is not None else "constant",
        modulation=modulation,
    )
    if modulation is not None:
        if modulus is None:
            modulus = suggest_modulus(spec, domain or Box.unit(dim))
        spec = replace(spec, modulus=modulus)
    return spec


def piecewise_spec(parts: list[tuple[Box, MonotoneMapSpec]]) -> MonotoneMapSpec:
    """Spec ``sum_i chi_{Omega_i}(x) a_i(y, xi)`` over box parts."""
    if not parts:
        raise ValueError("piecewise spec needs at least one part")
    first = parts[0][1]
    return MonotoneMapSpec(
        family=first.family,
        dim=first.dim,
        alpha=min(s.alpha for _, s in parts),
        beta=max(s.beta for _, s in parts),
        coefficient=first.coefficient,
        theta=first.theta,
        matrix=first.matrix,
        x_structure="piecewise",
        parts=tuple(Part(box, s) for box, s in parts),
    )


def _check_finite(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite components: {v}")
    return v


def eval_a(spec: MonotoneMapSpec, x, y, xi) -> np.ndarray:
    """``a(x, y, xi)``; ``y`` is read modulo the unit cell.

    ``x`` may be None for specs without x-dependence.
    """
    if x is None:
        if spec.x_structure != "constant":
            raise ValueError("x is required for an x-dependent spec")
        x = np.zeros(spec.dim)
    x = _check_finite("x", np.atleast_1d(x))
    y = _check_finite("y", np.atleast_1d(y))
    xi = _check_finite("xi", np.atleast_1d(xi))
    y = y - np.floor(y)
    c, theta = spec.coefficients(x, y)
    return spec.flux(c, theta, xi)


def freeze_x(spec: MonotoneMapSpec, partition) -> MonotoneMapSpec:
    """Piecewise spec ``a^k(x, y, xi) = sum_i chi_{Omega_i^k}(x) a(x_i^k, y, xi)``.

    ``partition`` is a sequence of ``(Box, anchor)`` pairs.
    """
    parts = []
    for box, anchor in partition:
        anchor = np.asarray(anchor, dtype=float)
        if not bool(box.contains(anchor)):
            raise ValueError(f"anchor {anchor.tolist()} lies outside its cell {box}")
        parts.append((box, spec.frozen_at(anchor)))
    return piecewise_spec(parts)


def box_partition(domain: Box, k: int) -> list[tuple[Box, np.ndarray]]:
    """Uniform partition of ``domain`` into ``k`` boxes per axis with centred anchors."""
    sides = domain.sides / k
    lower = np.array(domain.lower)
    out = []
    for idx in np.ndindex(*([k] * domain.dim)):
        j = np.array(idx[::-1], dtype=float)
        lo = lower + j * sides
        out.append((Box(tuple(lo), tuple(lo + sides)), lo + 0.5 * sides))
    return out


@dataclass(frozen=True)
class StructureAuditReport:
    alpha_observed: float
    beta_observed: float
    zero_violation: float
    modulus_violation: float
    sample_count: int
    rng_seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def validate_structure(
    spec: MonotoneMapSpec, n_samples: int, seed: int, domain: Box | None = None
) -> StructureAuditReport:
    """Sample ``(x, y, xi1, xi2)`` and check the declared structural conditions."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    domain = domain or Box.unit(spec.dim)
    rng = np.random.default_rng(seed)
    d = spec.dim
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    x = rng.uniform(lo, hi, size=(n_samples, d))
    x2 = rng.uniform(lo, hi, size=(n_samples, d))
    y = rng.uniform(0.0, 1.0, size=(n_samples, d))
    xi1 = rng.uniform(-XI_RANGE, XI_RANGE, size=(n_samples, d))
    xi2 = rng.uniform(-XI_RANGE, XI_RANGE, size=(n_samples, d))

    a1 = eval_a(spec, x, y, xi1)
    a2 = eval_a(spec, x, y, xi2)
    dxi = xi1 - xi2
    dxi2 = np.sum(dxi * dxi, axis=-1)
    ok = dxi2 > 0
    mono = np.sum((a1 - a2) * dxi, axis=-1)[ok] / dxi2[ok]
    lip = np.linalg.norm(a1 - a2, axis=-1)[ok] / np.sqrt(dxi2[ok])
    zero = np.linalg.norm(eval_a(spec, x, y, np.zeros_like(xi1)), axis=-1)

    mod_excess = 0.0
    if spec.x_structure == "continuous" and spec.modulus is not None:
        b1 = a1
        b2 = eval_a(spec, x2, y, xi1)
        lhs = np.sum((b1 - b2) ** 2, axis=-1)
        rhs = spec.modulus(np.linalg.norm(x - x2, axis=-1)) * np.sum(xi1 * xi1, axis=-1)
        mod_excess = float(np.max(lhs - rhs))

    report = StructureAuditReport(
        alpha_observed=float(np.min(mono)) if mono.size else math.inf,
        beta_observed=float(np.max(lip)) if lip.size else 0.0,
        zero_violation=float(np.max(zero)),
        modulus_violation=mod_excess,
        sample_count=int(n_samples),
        rng_seed=int(seed),
    )
    if report.alpha_observed < spec.alpha - STRUCTURE_TOL:
        raise StructureError(
            "monotonicity", f"observed {report.alpha_observed} below declared alpha={spec.alpha}"
        )
    if report.beta_observed > spec.beta + STRUCTURE_TOL:
        raise StructureError(
            "lipschitz", f"observed {report.beta_observed} above declared beta={spec.beta}"
        )
    if report.zero_violation > STRUCTURE_TOL:
        raise StructureError("zero", f"|a(x, y, 0)| reached {report.zero_violation}")
    if mod_excess > STRUCTURE_TOL:
        raise StructureError("modulus", f"omega bound exceeded by {mod_excess}")
    return report


def compile_flux(spec: MonotoneMapSpec, x: np.ndarray, y: np.ndarray):
    """Flux closure ``xi -> a(x, y, xi)`` with coefficients precomputed at fixed points.

    ``x`` and ``y`` broadcast against the gradients passed to the closure
    (typically shape (E, Q, dim) at quadrature points).
    """
    y = np.asarray(y, dtype=float)
    c, theta = spec.coefficients(x, y - np.floor(y))
    c = np.ascontiguousarray(c)
    theta = np.ascontiguousarray(theta)

    def flux(xi: np.ndarray) -> np.ndarray:
        return spec.flux(c, theta, xi)

    return flux
