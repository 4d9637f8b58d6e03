"""The oscillatory Dirichlet problem ``-div a(x, x/eps, Du_eps) = f`` on a box."""

from __future__ import annotations

import numpy as np

from .loads import Load
from .mesh import FEField, MacroMesh, l2_norm_gradient_diff
from .operators import MonotoneMapSpec, box_partition, compile_flux, freeze_x
from .solver import (
    DiscreteProblem,
    SolveOptions,
    SolveStats,
    energy_terms,
    load_vector,
    solve_monotone,
    space_for,
)

MIN_CELLS_PER_PERIOD = 8


class ResolutionError(ValueError):
    pass


def resolution_check(mesh: MacroMesh, epsilon: float, min_cells_per_period: int = MIN_CELLS_PER_PERIOD) -> None:
    """Raise unless every period of length ``epsilon`` spans ``min_cells_per_period`` elements."""
    if not epsilon > 0:
        raise ResolutionError(f"epsilon must be positive, got {epsilon}")
    ratio = epsilon / float(np.max(mesh.h))
    if ratio < min_cells_per_period * (1 - 1e-12):
        need = int(np.ceil(min_cells_per_period * np.max(mesh.box.sides) / epsilon))
        raise ResolutionError(
            f"epsilon={epsilon} gives {ratio:.3g} cells per period, need {min_cells_per_period}; "
            f"use n_per_side >= {need}"
        )


def oscillatory_problem(spec: MonotoneMapSpec, epsilon: float, mesh: MacroMesh, f: Load | None) -> DiscreteProblem:
    space = space_for(mesh)
    quad = space.quadrature
    flux = compile_flux(spec, quad.points, quad.points / epsilon)
    return DiscreteProblem(space, flux, load_vector(space, f), spec.alpha, spec.beta)


def solve_oscillatory(
    spec: MonotoneMapSpec,
    epsilon: float,
    mesh: MacroMesh,
    f: Load | None,
    opts: SolveOptions | None = None,
    min_cells_per_period: int = MIN_CELLS_PER_PERIOD,
) -> tuple[FEField, SolveStats]:
    if spec.dim != mesh.dim:
        raise ValueError(f"spec is {spec.dim}D but the mesh is {mesh.dim}D")
    resolution_check(mesh, epsilon, min_cells_per_period)
    return solve_monotone(oscillatory_problem(spec, epsilon, mesh, f), opts)


def energy_bound_terms(spec, epsilon, mesh, f, u_h: FEField) -> tuple[float, float]:
    """``(alpha ||Du_h||^2, <f, u_h>)``; the first never exceeds the second."""
    problem = oscillatory_problem(spec, epsilon, mesh, f)
    energy, work = energy_terms(problem, u_h)
    return spec.alpha * energy, work


def frozen_coefficient_check(
    spec: MonotoneMapSpec,
    epsilon: float,
    mesh: MacroMesh,
    f: Load | None,
    k: int,
    opts: SolveOptions | None = None,
    u_h: FEField | None = None,
) -> dict:
    """Compare ``u_h`` with ``u_h^k`` solved for ``a`` frozen on a ``k``-per-axis box partition.

    Returns the measured ``||Du_h^k - Du_h||^2`` and the bound
    ``omega(diam) ||Du_h||^2 / alpha^2`` (``C = ||Du_h||^2`` measured).
    """
    if spec.modulus is None:
        raise ValueError("frozen-coefficient check needs a declared modulus")
    if u_h is None:
        u_h, _ = solve_oscillatory(spec, epsilon, mesh, f, opts)
    partition = box_partition(mesh.box, k)
    frozen = freeze_x(spec, partition)
    u_k, _ = solve_oscillatory(frozen, epsilon, mesh, f, opts)
    diam = partition[0][0].diameter
    energy = l2_norm_gradient_diff(u_h, 0) ** 2
    lhs = l2_norm_gradient_diff(u_k, u_h) ** 2
    bound = float(spec.modulus(diam)) * energy / spec.alpha**2
    return {"k": k, "diameter": diam, "measured": lhs, "C": energy, "bound": bound, "u_k": u_k}
