"""Cell averaging ``M_h``, the anchor map ``gamma_h`` and the corrector field ``P_h``.

``P_h(x) = xi_j + Dv^{xi_j, x*}(x / eps)`` on every interior lattice cell
``Y^j``, where ``xi_j`` is the cell average of ``Du`` and ``x*`` the anchor at
which ``a`` is frozen; ``P_h`` vanishes off the interior cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cell import CellSolution
from .homogenized import HomogenizedMap
from .mesh import CellCover, CellMesh, FEField, MeshError, StructuredMesh, _gradient_samples
from .operators import MonotoneMapSpec
from .solver import SolveOptions

ANCHOR_MODES = ("gamma", "part_anchor")


@dataclass
class StepField:
    """Piecewise-constant vector field: ``values[k]`` on cell ``cover.interior[k]``, zero elsewhere."""

    cover: CellCover
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, self.cover.dim)
        if self.values.shape[0] != self.cover.n_cells:
            raise ValueError(f"{self.values.shape[0]} values for {self.cover.n_cells} cells")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        k = self.cover.cell_of(points)
        out = np.zeros(points.shape)
        inside = k >= 0
        out[inside] = self.values[k[inside]]
        return out

    def l2_norm(self) -> float:
        """``||M_h f||_{L^2}`` over the union of interior cells."""
        return math.sqrt(float(np.sum(self.values**2)) * self.cover.epsilon**self.cover.dim)


def apply_Mh(g, cover: CellCover, mesh: StructuredMesh | None = None, refine: int = 1) -> StepField:
    """Cell averages ``xi_j = |Y^j|^{-1} int_{Y^j} g dx`` by mesh quadrature.

    ``g`` is an FEField (its gradient is averaged) or a vector sampler
    ``points (M, d) -> (M, d)`` together with ``mesh``.  The result is exact
    for integrands the Gauss rule integrates exactly when the mesh is aligned
    with the lattice.
    """
    if isinstance(g, FEField):
        mesh = g.mesh
    if mesh is None:
        raise MeshError("a sampler needs a mesh for its quadrature")
    quad = mesh.quadrature(refine)
    samples = _gradient_samples(g, quad).reshape(-1, cover.dim)
    weights = np.broadcast_to(quad.weights, quad.points.shape[:2]).ravel()
    k = cover.cell_of(quad.points.reshape(-1, cover.dim))
    inside = k >= 0
    sums = np.stack(
        [
            np.bincount(k[inside], weights=weights[inside] * samples[inside, i], minlength=cover.n_cells)
            for i in range(cover.dim)
        ],
        axis=1,
    )
    return StepField(cover, sums / cover.epsilon**cover.dim)


class GammaMap:
    """``gamma_h(x) = x_j`` for ``x`` in ``Y^j``; NaN off the interior cells."""

    def __init__(self, cover: CellCover):
        self.cover = cover

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        k = self.cover.cell_of(points)
        out = np.full(points.shape, np.nan)
        inside = k >= 0
        out[inside] = self.cover.anchors[k[inside]]
        return out


def build_gamma(cover: CellCover) -> GammaMap:
    return GammaMap(cover)


class CorrectorField:
    """Gradient sampler ``x -> P_h(x)`` backed by one cell solution per (cell, anchor key)."""

    def __init__(self, cover: CellCover, step: StepField, mode: str, hmap: HomogenizedMap, solutions, cell_keys):
        self.cover = cover
        self.step = step
        self.mode = mode
        self.hmap = hmap
        self.solutions: dict[tuple[int, str], CellSolution] = solutions
        self.cell_keys = cell_keys

    def _point_keys(self, points: np.ndarray, cells: np.ndarray) -> list[str]:
        if self.mode == "gamma" or self.hmap.spec.x_structure == "constant":
            return [self.cell_keys[k] for k in cells]
        return [self.hmap.x_key(p) for p in points]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, self.cover.dim)
        k = self.cover.cell_of(flat)
        out = np.zeros(flat.shape)
        inside = np.nonzero(k >= 0)[0]
        if inside.size:
            keys = self._point_keys(flat[inside], k[inside])
            groups: dict[tuple[int, str], list[int]] = {}
            for pos, cell, key in zip(inside.tolist(), k[inside].tolist(), keys):
                groups.setdefault((cell, key), []).append(pos)
            eps = self.cover.epsilon
            for (cell, key), rows in groups.items():
                sol = self.solutions[(cell, key)]
                out[rows] = sol.total_gradient(flat[rows] / eps)
        return out.reshape(points.shape)

    def cell_energy_ratio(self) -> float:
        """Largest ``int_Y |xi_j + Dv|^2 dy / |xi_j|^2`` over cells with ``xi_j != 0``.

        Equals ``int_{Y^j} |P_h|^2 dx / (|xi_j|^2 |Y^j|)`` by a change of variables.
        """
        worst = 0.0
        for sol in self.solutions.values():
            n2 = float(np.sum(sol.xi**2))
            if n2 > 0:
                worst = max(worst, sol.energy() / n2)
        return worst


def build_corrector(
    spec: MonotoneMapSpec,
    cover: CellCover,
    step: StepField,
    anchor_mode: str = "gamma",
    cell_mesh: CellMesh | int = 64,
    opts: SolveOptions | None = None,
    hmap: HomogenizedMap | None = None,
) -> CorrectorField:
    """Solve (or fetch) the cell problem at ``(anchor, xi_j)`` for every interior cell.

    ``gamma`` anchors at the cover anchors ``x_j``; ``part_anchor`` uses the
    part of a piecewise spec (the per-part flux ``b_i``), one solution per
    part a cell overlaps.
    """
    if anchor_mode not in ANCHOR_MODES:
        raise ValueError(f"unknown anchor mode {anchor_mode!r}")
    if step.cover is not cover:
        raise ValueError("step field was built on a different cover")
    if hmap is None:
        hmap = HomogenizedMap(spec, cell_mesh, opts)
    elif hmap.spec is not spec:
        raise ValueError("homogenized map belongs to a different spec")

    cell_keys = [hmap.x_key(a) for a in cover.anchors]
    needed: list[tuple[int, str]] = []
    if anchor_mode == "gamma" or spec.x_structure == "constant":
        needed = list(enumerate(cell_keys))
    elif spec.x_structure == "piecewise":
        for k, j in enumerate(cover.interior):
            box = cover.cell_box(j)
            for i, part in enumerate(spec.parts):
                if box.overlaps(part.box):
                    needed.append((k, f"part:{i}"))
    else:
        raise ValueError("part anchors need a piecewise or x-independent spec")

    pairs = [(key, step.values[k]) for k, key in needed]
    hmap._solve_all(pairs)
    solutions = {}
    for (k, key), (_, xi) in zip(needed, pairs):
        try:
            solutions[(k, key)] = hmap.cell_solution(key, xi)
        except Exception as exc:  # pragma: no cover - propagated with context
            raise RuntimeError(f"cell solve failed for lattice cell {cover.interior[k].tolist()}: {exc}") from exc
    return CorrectorField(cover, step, anchor_mode, hmap, solutions, cell_keys)


@dataclass
class CorrectorErrors:
    e_plain: float
    e_corr: float
    e_outside: float
    refine: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _alignment_refine(mesh: StructuredMesh, eps: float, cell_n: int) -> int | None:
    """Quadrature refinement that makes sub-elements match the scaled cell mesh, or None."""
    spacing = eps / cell_n
    refine = 1
    for h, lo in zip(mesh.h, mesh.box.lower):
        if not _is_int(lo / spacing) and not _is_int(lo / h):
            return None
        r = h / spacing
        if _is_int(r):
            refine = max(refine, int(round(r)))
        elif not _is_int(spacing / h):
            return None
    return refine


def _is_int(v: float, tol: float = 1e-9) -> bool:
    return abs(v - round(v)) <= tol * max(1.0, abs(v))


def corrector_error(
    u_h: FEField,
    u: FEField,
    P: CorrectorField,
    refine: int | None = None,
    split: bool = True,
) -> CorrectorErrors:
    """``||Du_h - Du||``, ``||Du_h - P_h||`` and ``||Du_h||`` off the interior cells.

    With ``split`` the element quadrature is refined so that every
    sub-element lies inside one element of the scaled cell mesh (and hence
    one lattice cell); a mesh that cannot be aligned this way raises.
    """
    if u_h.mesh is not u.mesh:
        raise MeshError("u_h and u must share the macro mesh")
    mesh = u_h.mesh
    if refine is None:
        aligned = _alignment_refine(mesh, P.cover.epsilon, P.hmap.cell_mesh.n)
        if aligned is None:
            if split:
                raise MeshError("macro mesh is not aligned with the epsilon-lattice and cell mesh")
            aligned = 1
        refine = aligned
    quad = mesh.quadrature(refine)
    pts = quad.points.reshape(-1, mesh.dim)
    w = np.broadcast_to(quad.weights, quad.points.shape[:2]).ravel()
    du_h = quad.gradient(u_h.values).reshape(-1, mesh.dim)
    du = quad.gradient(u.values).reshape(-1, mesh.dim)
    p = P(pts)
    outside = P.cover.cell_of(pts) < 0
    sq = lambda v: np.sum(v * v, axis=1)  # noqa: E731
    return CorrectorErrors(
        e_plain=math.sqrt(float(w @ sq(du_h - du))),
        e_corr=math.sqrt(float(w @ sq(du_h - p))),
        e_outside=math.sqrt(float(w[outside] @ sq(du_h[outside]))),
        refine=refine,
    )


def export_corrected_gradient(u_h: FEField, P: CorrectorField, path, refine: int = 1) -> None:
    """CSV rows ``x.., du_h.., p..`` at the macro quadrature points."""
    d = u_h.mesh.dim
    quad = u_h.mesh.quadrature(refine)
    pts = quad.points.reshape(-1, d)
    du = quad.gradient(u_h.values).reshape(-1, d)
    p = P(pts)
    header = [f"x{i}" for i in range(d)] + [f"du_h{i}" for i in range(d)] + [f"p{i}" for i in range(d)]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.column_stack([pts, du, p]):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
