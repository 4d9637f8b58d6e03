"""Structured meshes on boxes, finite-element fields and the epsilon-lattice cover.

Everything here is built on uniform tensor grids: P1 segments in 1D and Q1
bilinear quadrilaterals in 2D, integrated with a 2-point Gauss rule per
direction.  Arrays are laid out with the first axis varying fastest, so node
``(i, j)`` of a 2D grid with ``n`` elements per side has flat index
``i + (n + 1) * j``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GAUSS_POINTS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
GAUSS_WEIGHTS = np.array([0.5, 0.5])

Sampler = Callable[[np.ndarray], np.ndarray]


class MeshError(ValueError):
    """Invalid mesh, cover or field arguments."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod_i (lower[i], upper[i])``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or len(lower) not in (1, 2):
            raise MeshError(f"box must be 1D or 2D, got lower={lower} upper={upper}")
        if any(not (lo < hi) for lo, hi in zip(lower, upper)):
            raise MeshError(f"degenerate box {lower} x {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "Box":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.sides))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        """Closed containment test, vectorized over leading axes of ``x``."""
        x = np.asarray(x, dtype=float)
        lo = np.array(self.lower) - tol
        hi = np.array(self.upper) + tol
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def overlaps(self, other: "Box", tol: float = 0.0) -> bool:
        """True if the intersection has positive measure."""
        return all(
            min(a_hi, b_hi) - max(a_lo, b_lo) > tol
            for a_lo, a_hi, b_lo, b_hi in zip(self.lower, self.upper, other.lower, other.upper)
        )

    def inside(self, other: "Box", tol: float = 0.0) -> bool:
        """True if ``self`` is contained in the closure of ``other``."""
        return all(
            a_lo >= b_lo - tol and a_hi <= b_hi + tol
            for a_lo, a_hi, b_lo, b_hi in zip(self.lower, self.upper, other.lower, other.upper)
        )

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


def _reference_basis(dim: int, points: np.ndarray):
    """Values and reference gradients of the tensor-product linear basis.

    ``points`` has shape (P, dim) in the reference cell [0, 1]^dim.  Local node
    order is counter-clockwise: (0,0), (1,0), (1,1), (0,1) in 2D.
    """
    if dim == 1:
        s = points[:, 0]
        values = np.stack([1.0 - s, s], axis=1)
        grads = np.stack([-np.ones_like(s), np.ones_like(s)], axis=1)[:, :, None]
        return values, grads
    s, t = points[:, 0], points[:, 1]
    values = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=1)
    ds = np.stack([-(1 - t), 1 - t, t, -t], axis=1)
    dt = np.stack([-(1 - s), -s, s, 1 - s], axis=1)
    return values, np.stack([ds, dt], axis=2)


def _local_offsets(dim: int) -> list[tuple[int, ...]]:
    return [(0,), (1,)] if dim == 1 else [(0, 0), (1, 0), (1, 1), (0, 1)]


def gauss_rule(dim: int, refine: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Composite tensor Gauss rule on [0, 1]^dim with ``refine`` sub-intervals per axis."""
    pts_1d = ((np.arange(refine)[:, None] + GAUSS_POINTS[None, :]) / refine).ravel()
    wts_1d = np.tile(GAUSS_WEIGHTS / refine, refine)
    grids = np.meshgrid(*([pts_1d] * dim), indexing="ij")
    wgrids = np.meshgrid(*([wts_1d] * dim), indexing="ij")
    # first axis fastest, matching the node numbering
    points = np.stack([g.T.ravel() for g in grids], axis=1) if dim == 2 else pts_1d[:, None]
    weights = np.prod(np.stack([g.T.ravel() for g in wgrids], axis=1), axis=1) if dim == 2 else wts_1d
    return points, weights


class StructuredMesh:
    """Uniform grid with ``n_per_side`` elements along every axis of ``box``."""

    def __init__(self, box: Box, n_per_side: int):
        if int(n_per_side) != n_per_side or n_per_side < 1:
            raise MeshError(f"n_per_side must be a positive integer, got {n_per_side}")
        self.box = box
        self.dim = box.dim
        self.n = int(n_per_side)
        self.h = box.sides / self.n
        shape = (self.n + 1,) * self.dim
        axes = [np.linspace(lo, hi, self.n + 1) for lo, hi in zip(box.lower, box.upper)]
        if self.dim == 1:
            self.nodes = axes[0][:, None]
        else:
            X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
            self.nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
        self.node_shape = shape
        self.n_nodes = self.nodes.shape[0]
        self.n_elements = self.n**self.dim

        # element (i, j) -> lower-left node, plus local offsets
        elem_idx = np.arange(self.n)
        if self.dim == 1:
            self.element_index = elem_idx[:, None]
        else:
            I, J = np.meshgrid(elem_idx, elem_idx, indexing="xy")
            self.element_index = np.stack([I.ravel(), J.ravel()], axis=1)
        self.elements = np.stack(
            [self._flat(self.element_index + np.array(off)) for off in _local_offsets(self.dim)],
            axis=1,
        )
        self.element_volume = float(np.prod(self.h))
        self.element_lower = np.array(box.lower) + self.element_index * self.h

    def _flat(self, idx: np.ndarray) -> np.ndarray:
        if self.dim == 1:
            return idx[..., 0]
        return idx[..., 0] + (self.n + 1) * idx[..., 1]

    @property
    def element_volumes(self) -> np.ndarray:
        return np.full(self.n_elements, self.element_volume)

    def quadrature(self, refine: int = 1) -> "Quadrature":
        if refine == 1:
            return self._quadrature
        return Quadrature(self, refine)

    @cached_property
    def _quadrature(self) -> "Quadrature":
        return Quadrature(self, 1)

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and reference coordinates of physical points."""
        points = np.asarray(points, dtype=float)
        rel = (points - np.array(self.box.lower)) / self.h
        idx = np.clip(np.floor(rel).astype(int), 0, self.n - 1)
        local = rel - idx
        if self.dim == 1:
            elem = idx[..., 0]
        else:
            elem = idx[..., 0] + self.n * idx[..., 1]
        return elem, local


class Quadrature:
    """Quadrature points, weights and basis gradients on every element of a mesh."""

    def __init__(self, mesh: StructuredMesh, refine: int = 1):
        self.mesh = mesh
        self.refine = refine
        ref_points, ref_weights = gauss_rule(mesh.dim, refine)
        self.n_points = ref_points.shape[0]
        self.values, ref_grads = _reference_basis(mesh.dim, ref_points)
        # physical gradients: d/dx = (1/h) d/ds on a uniform grid
        self.grads = ref_grads / mesh.h[None, None, :]
        self.weights = ref_weights * mesh.element_volume
        self.points = mesh.element_lower[:, None, :] + ref_points[None, :, :] * mesh.h

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Gradients (E, Q, dim) of a nodal field at the quadrature points."""
        local = nodal[self.mesh.elements]
        return np.einsum("el,qld->eqd", local, self.grads)

    def value(self, nodal: np.ndarray) -> np.ndarray:
        return nodal[self.mesh.elements] @ self.values.T

    def integrate_flux(self, flux: np.ndarray) -> np.ndarray:
        """Nodal vector ``r_i = sum_q w_q flux_q . D phi_i``."""
        local = np.einsum("eqd,qld,q->el", flux, self.grads, self.weights)
        return np.bincount(
            self.mesh.elements.ravel(), weights=local.ravel(), minlength=self.mesh.n_nodes
        )

    def integrate_load(self, density: np.ndarray) -> np.ndarray:
        local = np.einsum("eq,ql,q->el", density, self.values, self.weights)
        return np.bincount(
            self.mesh.elements.ravel(), weights=local.ravel(), minlength=self.mesh.n_nodes
        )

    def integrate(self, values: np.ndarray) -> float:
        return float(np.einsum("eq,q->", values, self.weights))


class CellMesh(StructuredMesh):
    """Uniform mesh of the unit cell with periodic identification of opposite faces."""

    def __init__(self, dim: int, n_per_side: int):
        if dim not in (1, 2):
            raise MeshError(f"dim must be 1 or 2, got {dim}")
        if int(n_per_side) != n_per_side or n_per_side < 2:
            raise MeshError(f"cell mesh needs n_per_side >= 2, got {n_per_side}")
        super().__init__(Box.unit(dim), n_per_side)
        idx = np.indices(self.node_shape).reshape(self.dim, -1).T
        if self.dim == 2:
            # np.indices gives (row, col) = (j, i); flip to first-axis-fastest
            idx = idx[:, ::-1]
        wrapped = idx % self.n
        if self.dim == 1:
            self.dof_of_node = wrapped[:, 0]
        else:
            self.dof_of_node = wrapped[:, 0] + self.n * wrapped[:, 1]
        self.n_dofs = self.n**self.dim
        # representative node of every dof (the one with all indices < n)
        rep = np.full(self.n_dofs, -1)
        inner = np.all(idx < self.n, axis=1)
        rep[self.dof_of_node[inner]] = np.nonzero(inner)[0]
        self.dof_nodes = rep

    @cached_property
    def periodic_pairs(self) -> np.ndarray:
        """Pairs (boundary node, representative node) identified by periodicity."""
        nodes = np.arange(self.n_nodes)
        rep = self.dof_nodes[self.dof_of_node]
        mask = rep != nodes
        return np.stack([nodes[mask], rep[mask]], axis=1)


class MacroMesh(StructuredMesh):
    """Uniform mesh of a box domain with homogeneous Dirichlet boundary nodes."""

    def __init__(self, domain: Box, n_per_side: int):
        if int(n_per_side) != n_per_side or n_per_side < 2:
            raise MeshError(f"macro mesh needs n_per_side >= 2, got {n_per_side}")
        super().__init__(domain, n_per_side)
        idx = np.indices(self.node_shape).reshape(self.dim, -1).T
        if self.dim == 2:
            idx = idx[:, ::-1]
        self.boundary = np.any((idx == 0) | (idx == self.n), axis=1)
        self.free_nodes = np.nonzero(~self.boundary)[0]


def build_cell_mesh(dim: int, n_per_side: int) -> CellMesh:
    return CellMesh(dim, n_per_side)


def build_macro_mesh(domain: Box, n_per_side: int) -> MacroMesh:
    return MacroMesh(domain, n_per_side)


@dataclass
class FEField:
    """Continuous piecewise (bi)linear field given by its nodal values."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshError(
                f"field has {self.values.shape} coefficients, mesh has {self.mesh.n_nodes} nodes"
            )

    @classmethod
    def zeros(cls, mesh: StructuredMesh) -> "FEField":
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def interpolate(cls, mesh: StructuredMesh, func: Sampler) -> "FEField":
        return cls(mesh, np.asarray(func(mesh.nodes), dtype=float).reshape(mesh.n_nodes))

    def gradient_at_quadrature(self, refine: int = 1) -> np.ndarray:
        return self.mesh.quadrature(refine).gradient(self.values)

    def gradient_at(self, points: np.ndarray, periodic: bool = False) -> np.ndarray:
        """Gradient at arbitrary points of the mesh box (wrapped into it if ``periodic``)."""
        points = np.asarray(points, dtype=float)
        if periodic:
            lo = np.array(self.mesh.box.lower)
            points = lo + np.mod(points - lo, self.mesh.box.sides)
        elem, local = self.mesh.locate(points)
        flat_local = local.reshape(-1, self.mesh.dim)
        _, grads = _reference_basis(self.mesh.dim, flat_local)
        coeffs = self.values[self.mesh.elements[elem.ravel()]]
        g = np.einsum("pl,pld->pd", coeffs, grads) / self.mesh.h
        return g.reshape(points.shape)

    def value_at(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        elem, local = self.mesh.locate(points)
        vals, _ = _reference_basis(self.mesh.dim, local.reshape(-1, self.mesh.dim))
        coeffs = self.values[self.mesh.elements[elem.ravel()]]
        return np.einsum("pl,pl->p", coeffs, vals).reshape(points.shape[:-1])

    def mean(self) -> float:
        quad = self.mesh.quadrature()
        return quad.integrate(quad.value(self.values)) / self.mesh.box.volume

    def l2_norm(self) -> float:
        quad = self.mesh.quadrature()
        return math.sqrt(quad.integrate(quad.value(self.values) ** 2))


def _gradient_samples(f, quad: Quadrature) -> np.ndarray:
    if isinstance(f, FEField):
        if f.mesh is not quad.mesh:
            raise MeshError("field lives on a different mesh; pass a gradient sampler instead")
        return quad.gradient(f.values)
    if callable(f):
        pts = quad.points.reshape(-1, quad.mesh.dim)
        return np.asarray(f(pts), dtype=float).reshape(quad.points.shape)
    if np.isscalar(f) and f == 0:
        return np.zeros(quad.points.shape)
    raise MeshError(f"cannot sample gradient of {type(f).__name__}")


def l2_norm_gradient_diff(f, g, mesh: StructuredMesh | None = None, refine: int = 1) -> float:
    """``||Df - Dg||_{L^2}`` by per-element Gauss quadrature.

    ``f`` and ``g`` are FEFields or gradient samplers ``points (M, d) -> (M, d)``;
    ``g = 0`` is accepted.  ``mesh`` is needed only when neither is a field.
    """
    if mesh is None:
        for candidate in (f, g):
            if isinstance(candidate, FEField):
                mesh = candidate.mesh
                break
        else:
            raise MeshError("need a mesh when both arguments are samplers")
    for candidate in (f, g):
        if isinstance(candidate, FEField) and candidate.mesh is not mesh:
            raise MeshError("fields live on different meshes")
    quad = mesh.quadrature(refine)
    diff = _gradient_samples(f, quad) - _gradient_samples(g, quad)
    return math.sqrt(quad.integrate(np.sum(diff**2, axis=-1)))


@dataclass(frozen=True)
class CellCover:
    """The epsilon-lattice ``Y^j = eps * (j + Y)`` over a box domain.

    ``interior`` lists the multi-indices ``j`` whose closed cell lies in the
    closed domain, in lexicographic order (first axis fastest).  For every part
    ``i`` of an optional box partition, ``interior_by_part[i]`` holds the cells
    inside part ``i`` and ``boundary_by_part[i]`` the cells that overlap part
    ``i`` with positive measure without being contained in it.  Without a
    partition the domain itself is part 0.
    """

    domain: Box
    epsilon: float
    anchor_rule: str
    interior: np.ndarray
    anchors: np.ndarray
    interior_by_part: tuple[np.ndarray, ...]
    boundary_by_part: tuple[np.ndarray, ...]
    parts: tuple[Box, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_cells(self) -> int:
        return self.interior.shape[0]

    def cell_box(self, j) -> Box:
        j = np.asarray(j, dtype=float)
        return Box(tuple(self.epsilon * j), tuple(self.epsilon * (j + 1)))

    @cached_property
    def _lookup(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in j): k for k, j in enumerate(self.interior)}

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Position in ``interior`` of the cell holding each point, -1 outside."""
        points = np.asarray(points, dtype=float)
        j = np.floor(points / self.epsilon).astype(int)
        flat = j.reshape(-1, self.dim)
        lookup = self._lookup
        out = np.array([lookup.get(tuple(row), -1) for row in flat.tolist()], dtype=int)
        return out.reshape(points.shape[:-1])

    def boundary_measure(self, part: int = 0) -> float:
        """``|F_i^h|``: total measure of the cells in ``boundary_by_part[part]``."""
        return len(self.boundary_by_part[part]) * self.epsilon**self.dim


ANCHOR_RULES = ("center", "corner")


def build_cell_cover(
    domain: Box,
    epsilon: float,
    anchor_rule: str = "center",
    parts: tuple[Box, ...] | list[Box] | None = None,
) -> CellCover:
    if not epsilon > 0:
        raise MeshError(f"epsilon must be positive, got {epsilon}")
    if epsilon >= domain.diameter:
        raise MeshError(f"epsilon={epsilon} is not smaller than the domain diameter")
    if anchor_rule not in ANCHOR_RULES:
        raise MeshError(f"unknown anchor rule {anchor_rule!r}")
    parts = tuple(parts) if parts else (domain,)
    tol = 1e-12 * max(1.0, max(abs(v) for v in domain.lower + domain.upper))

    ranges = [
        range(math.floor(lo / epsilon) - 1, math.ceil(hi / epsilon) + 1)
        for lo, hi in zip(domain.lower, domain.upper)
    ]
    interior, by_part, boundary = [], [[] for _ in parts], [[] for _ in parts]
    # itertools.product varies the last axis fastest; reverse to keep axis 0 fastest
    for rev in itertools.product(*reversed(ranges)):
        j = rev[::-1]
        cell = Box(tuple(epsilon * v for v in j), tuple(epsilon * (v + 1) for v in j))
        if cell.inside(domain, tol):
            interior.append(j)
        for i, part in enumerate(parts):
            if cell.inside(part, tol):
                by_part[i].append(j)
            elif cell.overlaps(part, tol):
                boundary[i].append(j)

    interior_arr = np.array(interior, dtype=int).reshape(-1, domain.dim)
    offset = 0.5 if anchor_rule == "center" else 0.0
    anchors = epsilon * (interior_arr + offset)
    as_arr = lambda rows: np.array(rows, dtype=int).reshape(-1, domain.dim)  # noqa: E731
    return CellCover(
        domain=domain,
        epsilon=float(epsilon),
        anchor_rule=anchor_rule,
        interior=interior_arr,
        anchors=anchors,
        interior_by_part=tuple(as_arr(r) for r in by_part),
        boundary_by_part=tuple(as_arr(r) for r in boundary),
        parts=parts,
    )


def dump_field_csv(f: FEField, path) -> None:
    """Write ``x0[,x1],value`` rows, one per mesh node."""
    cols = [f"x{i}" for i in range(f.mesh.dim)] + ["value"]
    data = np.column_stack([f.mesh.nodes, f.values])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
