"""Periodic cell problems and the averaged flux ``b(x, xi)``.

The corrector ``v`` solves ``int_Y (a(x, y, xi + Dv), D phi) dy = 0`` for all
periodic zero-mean ``phi``; ``b(x, xi)`` is the cell average of
``a(x, y, xi + Dv)``.  In 1D the flux ``a(y, xi + v')`` is constant in ``y``,
which gives an independent oracle by nested bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import CellMesh, FEField, gauss_rule
from .operators import MonotoneMapSpec, compile_flux
from .solver import DiscreteProblem, SolveOptions, SolveStats, solve_monotone, space_for


def resolve_local_spec(spec: MonotoneMapSpec, x) -> tuple[MonotoneMapSpec, np.ndarray]:
    """x-independent spec ``a(x, ., .)`` and the point used for it.

    ``x`` is a point, ``None`` (x-independent specs only) or, for piecewise
    specs, an integer part index.
    """
    if spec.x_structure == "piecewise" and isinstance(x, (int, np.integer)):
        part = spec.parts[int(x)]
        return part.spec, part.box.center
    if x is None:
        if spec.x_structure != "constant":
            raise ValueError("x is required for x-dependent specs")
        return spec, np.zeros(spec.dim)
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    return spec.frozen_at(x), x


@dataclass
class CellSolution:
    xi: np.ndarray
    x_anchor: np.ndarray
    v: FEField
    averaged_flux: np.ndarray
    stats: SolveStats

    @property
    def mesh(self) -> CellMesh:
        return self.v.mesh

    def total_gradient(self, y: np.ndarray) -> np.ndarray:
        """``xi + Dv(y)`` at cell points, read periodically."""
        return self.xi + self.v.gradient_at(y, periodic=True)

    def energy(self) -> float:
        """``int_Y |xi + Dv|^2 dy``."""
        quad = self.mesh.quadrature()
        g = self.xi + quad.gradient(self.v.values)
        return quad.integrate(np.sum(g * g, axis=-1))


def _cell_flux(local: MonotoneMapSpec, x: np.ndarray, mesh: CellMesh):
    quad = mesh.quadrature()
    return compile_flux(local, x, quad.points)


def solve_cell(
    spec: MonotoneMapSpec,
    x,
    xi,
    mesh: CellMesh,
    opts: SolveOptions | None = None,
) -> CellSolution:
    if mesh.dim != spec.dim:
        raise ValueError(f"cell mesh is {mesh.dim}D but the spec is {spec.dim}D")
    xi = np.asarray(xi, dtype=float).reshape(spec.dim)
    if not np.all(np.isfinite(xi)):
        raise ValueError(f"xi has non-finite components: {xi}")
    local, point = resolve_local_spec(spec, x)
    space = space_for(mesh)
    base = _cell_flux(local, point, mesh)
    problem = DiscreteProblem(
        space=space,
        flux=lambda g: base(xi + g),
        load=np.zeros(space.n_dofs),
        alpha=local.alpha,
        beta=local.beta,
    )
    v, stats = solve_monotone(problem, opts)
    flux = average_flux(local, point, xi, v, mesh, _flux=base)
    return CellSolution(xi=xi, x_anchor=point, v=v, averaged_flux=flux, stats=stats)


def average_flux(spec: MonotoneMapSpec, x, xi, v: FEField, mesh: CellMesh, _flux=None) -> np.ndarray:
    """``int_Y a(x, y, xi + Dv(y)) dy`` with the mesh quadrature."""
    xi = np.asarray(xi, dtype=float).reshape(spec.dim)
    if _flux is None:
        local, point = resolve_local_spec(spec, x)
        _flux = _cell_flux(local, point, mesh)
    quad = mesh.quadrature()
    a = _flux(xi + quad.gradient(v.values))
    return np.einsum("eqd,q->d", a, quad.weights) / mesh.box.volume


def _bisect(fun, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12, max_iter: int = 200):
    """Vectorized bisection for increasing ``fun`` with ``fun(lo) <= 0 <= fun(hi)``."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(max_iter):
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        positive = fun(mid) > 0
        hi = np.where(positive, mid, hi)
        lo = np.where(positive, lo, mid)
    return 0.5 * (lo + hi)


class OracleError(RuntimeError):
    pass


def oracle_cell_1d(spec: MonotoneMapSpec, x, xi: float, n_quadrature: int = 512) -> float:
    """``b(x, xi)`` in 1D from flux constancy: find ``q`` with ``int_0^1 a^{-1}(y, q) dy = xi``.

    Composite 2-point Gauss over ``n_quadrature`` uniform sub-intervals; both
    the inversion of ``a(y, .)`` and the search for ``q`` are bisections to
    1e-12 relative.  Brackets follow from ``alpha |t| <= |a(y, t)| <= beta |t|``.
    """
    if spec.dim != 1:
        raise ValueError("the flux-constancy oracle is one-dimensional")
    xi = float(xi)
    if xi == 0.0:
        return 0.0
    local, point = resolve_local_spec(spec, x)
    pts, wts = gauss_rule(1, n_quadrature)
    c, theta = local.coefficients(point, pts)
    alpha, beta = local.alpha, local.beta

    def a(t: np.ndarray) -> np.ndarray:
        return local.flux(c, theta, t[:, None])[:, 0]

    def inverse(q: float) -> np.ndarray:
        lo = np.full(pts.shape[0], min(q / alpha, q / beta))
        hi = np.full(pts.shape[0], max(q / alpha, q / beta))
        return _bisect(lambda t: a(t) - q, lo, hi)

    def mismatch(q: np.ndarray) -> np.ndarray:
        return np.array([wts @ inverse(float(v)) - xi for v in np.atleast_1d(q)])

    lo, hi = sorted((alpha * xi, beta * xi))
    # bracket check with a small slack for the inner bisection error
    slack = 1e-9 * max(1.0, abs(xi))
    if mismatch(np.array([lo]))[0] > slack or mismatch(np.array([hi]))[0] < -slack:
        raise OracleError(f"could not bracket the flux for xi={xi}")
    q = _bisect(mismatch, np.array([lo]), np.array([hi]))
    return float(q[0])


def corrector_energy_ratio(s1: CellSolution, s2: CellSolution) -> float:
    """``int_Y |xi1 + Dv1 - xi2 - Dv2|^2 dy / |xi1 - xi2|^2``."""
    quad = s1.mesh.quadrature()
    g = (s1.xi - s2.xi) + quad.gradient(s1.v.values - s2.v.values)
    num = quad.integrate(np.sum(g * g, axis=-1))
    den = float(np.sum((s1.xi - s2.xi) ** 2))
    return num / den if den > 0 else math.nan
