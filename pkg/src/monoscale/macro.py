"""The homogenized Dirichlet problem ``-div b(x, Du) = f``."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .homogenized import HomogenizedMap
from .loads import Load
from .mesh import FEField, MacroMesh
from .solver import DiscreteProblem, SolveOptions, SolveStats, load_vector, solve_monotone, space_for


class UnauditedMapError(ValueError):
    pass


def _point_keys(b: HomogenizedMap, points: np.ndarray, anchor: Callable | None) -> list[str] | str:
    spec = b.spec
    if spec.x_structure == "constant":
        return "const"
    flat = points.reshape(-1, spec.dim)
    if spec.x_structure == "piecewise":
        idx = spec.part_index(flat)
        if np.any(idx < 0):
            raise ValueError("quadrature point outside every part")
        return [f"part:{i}" for i in idx]
    anchors = anchor(flat) if anchor is not None else flat
    return [b.x_key(p) for p in anchors]


def solve_homogenized(
    b: HomogenizedMap,
    mesh: MacroMesh,
    f: Load | None,
    opts: SolveOptions | None = None,
    override: bool = False,
    anchor: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[FEField, SolveStats]:
    """Solve with flux ``b`` at every quadrature point.

    Monotonicity ``alpha`` and Lipschitz ``beta**2 / alpha`` of ``b`` set the
    iteration step.  For continuous specs ``anchor`` maps quadrature points to
    the points where ``a`` is frozen (default: the points themselves).
    """
    if not override and (b.audit is None or not b.audit.passed):
        raise UnauditedMapError("homogenized map has no passing audit; run audit_properties or pass override=True")
    if b.dim != mesh.dim:
        raise ValueError(f"map is {b.dim}D but the mesh is {mesh.dim}D")
    space = space_for(mesh)
    quad = space.quadrature
    keys = _point_keys(b, quad.points, anchor)
    shape = quad.points.shape

    def flux(grad: np.ndarray) -> np.ndarray:
        return b.eval_b_many(keys, grad.reshape(-1, b.dim)).reshape(shape)

    problem = DiscreteProblem(space, flux, load_vector(space, f), b.b_alpha, b.b_beta)
    return solve_monotone(problem, opts)
