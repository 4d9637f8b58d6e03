"""Discrete solver for strongly monotone Lipschitz problems.

Finds ``u`` in a constrained finite-element space with
``<A(u), phi> = <f, phi>`` for every test function, using the preconditioned
Richardson (Zarantonello) map

    u <- u - tau R^{-1} (A(u) - f)

where ``R`` is the Laplace operator of the same space.  If ``A`` is strongly
monotone with constant ``alpha`` and Lipschitz with constant ``beta`` with
respect to the ``R``-norm, the map contracts with factor
``sqrt(1 - 2 tau alpha + tau**2 beta**2)`` for ``0 < tau < 2 alpha / beta**2``.
The same factor bounds the ratio of successive dual residual norms
``||A(u_k) - f||_{R^{-1}}``, which is what the stopping test monitors.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .loads import Load
from .mesh import CellMesh, FEField, MacroMesh, Quadrature, StructuredMesh

log = logging.getLogger(__name__)

FluxFn = Callable[[np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


class SetupError(SolverError):
    """The preconditioner is singular on the constrained space."""


class NonConvergenceError(SolverError):
    def __init__(self, message: str, stats: "SolveStats | None" = None):
        super().__init__(message)
        self.stats = stats


def contraction_factor(tau: float, alpha: float, beta: float) -> float:
    return math.sqrt(max(0.0, 1.0 - 2.0 * tau * alpha + tau * tau * beta * beta))


@dataclass
class SolveOptions:
    """Outer/inner iteration controls.

    ``tau=None`` resolves to ``alpha / beta**2``.  ``max_iter=None`` resolves to
    the iteration count the contraction bound needs to reach ``tol`` from the
    initial residual, with a 50% margin and a floor of 200.
    """

    tau: float | None = None
    tol: float = 1e-10
    max_iter: int | None = None
    inner: str = "direct"
    inner_tol: float = 1e-12
    inner_max_iter: int = 10_000

    def __post_init__(self):
        if self.tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.inner not in ("direct", "cg"):
            raise ValueError(f"inner solver must be 'direct' or 'cg', got {self.inner!r}")
        if self.max_iter is not None and self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")

    def resolved_tau(self, alpha: float, beta: float) -> float:
        tau = alpha / beta**2 if self.tau is None else self.tau
        if not 0 < tau < 2 * alpha / beta**2:
            raise ValueError(f"tau={tau} outside (0, 2 alpha / beta^2) = (0, {2 * alpha / beta**2})")
        return tau

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SolveStats:
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)
    tau: float = 0.0
    factor: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "tau": self.tau,
            "factor": self.factor,
        }


def solve_linear_spd(operator, rhs: np.ndarray, tol: float = 1e-12, max_it: int = 10_000, x0=None):
    """Conjugate gradients; returns ``(x, iterations)``.

    ``operator`` is a matrix or a callable computing the action.  Stops when
    ``||b - A x|| <= tol ||b||``.
    """
    matvec = operator if callable(operator) else (lambda v: operator @ v)
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    p = r.copy()
    rr = r @ r
    for it in range(max_it + 1):
        if math.sqrt(rr) <= tol * bnorm:
            return x, it
        if it == max_it:
            break
        q = matvec(p)
        pq = p @ q
        if pq <= 0:
            raise SolverError("operator is not positive definite")
        step = rr / pq
        x += step * p
        r -= step * q
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NonConvergenceError(f"CG did not reach tol={tol} in {max_it} iterations")


class FESpace:
    """Constrained space: Dirichlet zeros on a MacroMesh, periodic zero-mean on a CellMesh."""

    def __init__(self, mesh: StructuredMesh, quadrature: Quadrature | None = None):
        self.mesh = mesh
        self.quadrature = quadrature or mesh.quadrature()
        if isinstance(mesh, CellMesh):
            self.kind = "periodic"
            self.n_dofs = mesh.n_dofs
            self._node_to_dof = mesh.dof_of_node
        elif isinstance(mesh, MacroMesh):
            self.kind = "dirichlet"
            self.n_dofs = mesh.free_nodes.size
            node_to_dof = np.full(mesh.n_nodes, -1)
            node_to_dof[mesh.free_nodes] = np.arange(self.n_dofs)
            self._node_to_dof = node_to_dof
        else:
            raise SetupError(f"no constraint set for {type(mesh).__name__}")
        if self.n_dofs == 0:
            raise SetupError("constrained space is empty")

    def to_nodal(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "periodic":
            return u[self._node_to_dof]
        out = np.zeros(self.mesh.n_nodes)
        out[self.mesh.free_nodes] = u
        return out

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        """Sum nodal dual-vector entries into the dofs they belong to."""
        if self.kind == "periodic":
            return np.bincount(self._node_to_dof, weights=nodal, minlength=self.n_dofs)
        return nodal[self.mesh.free_nodes]

    def from_field(self, f: FEField) -> np.ndarray:
        if self.kind == "periodic":
            return f.values[self.mesh.dof_nodes]
        return f.values[self.mesh.free_nodes]

    def project(self, u: np.ndarray) -> np.ndarray:
        # uniform periodic grid: every dof carries the same mass
        return u - u.mean() if self.kind == "periodic" else u

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        quad = self.quadrature
        local = np.einsum("qad,qbd,q->ab", quad.grads, quad.grads, quad.weights)
        conn = self._node_to_dof[self.mesh.elements]
        nloc = conn.shape[1]
        rows = np.repeat(conn, nloc, axis=1).ravel()
        cols = np.tile(conn, (1, nloc)).ravel()
        vals = np.tile(local.ravel(), self.mesh.n_elements)
        keep = (rows >= 0) & (cols >= 0)
        return sp.csr_matrix(
            (vals[keep], (rows[keep], cols[keep])), shape=(self.n_dofs, self.n_dofs)
        )

    @cached_property
    def _factor(self):
        K = self.laplacian.tocsc()
        if self.kind == "periodic":
            K = K[1:, 1:]
        if K.shape[0] == 0:
            return None
        try:
            return spla.factorized(K)
        except RuntimeError as exc:
            raise SetupError(f"preconditioner is singular: {exc}") from exc

    def apply_inverse_laplacian(self, r: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
        """Solve ``R z = r`` on the constrained space (zero mean for periodic spaces)."""
        opts = opts or SolveOptions()
        pinned = self.kind == "periodic"
        rhs = r[1:] if pinned else r
        if opts.inner == "direct":
            z = self._factor(rhs) if rhs.size else rhs.copy()
        else:
            K = self.laplacian[1:, 1:] if pinned else self.laplacian
            z, _ = solve_linear_spd(K, rhs, opts.inner_tol, opts.inner_max_iter)
        if pinned:
            z = np.concatenate([[0.0], z])
        return self.project(z)


@dataclass
class DiscreteProblem:
    """``<A(u), phi> = <f, phi>`` with ``A(u) = int (flux(Du), D phi)``.

    ``flux`` maps gradients at the quadrature points, shape (E, Q, dim), to
    flux vectors of the same shape.  ``load`` is the dof-space load vector.
    """

    space: FESpace
    flux: FluxFn
    load: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        if not 0 < self.alpha <= self.beta:
            raise ValueError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")
        self.load = np.asarray(self.load, dtype=float)
        if self.load.shape != (self.space.n_dofs,):
            raise ValueError("load vector does not match the space")


def load_vector(space: FESpace, load: Load | None) -> np.ndarray:
    if load is None:
        return np.zeros(space.n_dofs)
    quad = space.quadrature
    density = load.density(quad.points, space.mesh.box)
    return space.restrict(quad.integrate_load(density))


def assemble_residual(problem: DiscreteProblem, u) -> np.ndarray:
    """Dof vector ``r_i = int (flux(Du), D phi_i) - <f, phi_i>``."""
    space = problem.space
    nodal = u.values if isinstance(u, FEField) else space.to_nodal(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(nodal)):
        raise ValueError("field has non-finite values")
    quad = space.quadrature
    flux = problem.flux(quad.gradient(nodal))
    return space.restrict(quad.integrate_flux(flux)) - problem.load


def dual_norm(space: FESpace, r: np.ndarray, opts: SolveOptions | None = None) -> float:
    z = space.apply_inverse_laplacian(r, opts)
    return math.sqrt(max(0.0, float(r @ z)))


def solve_monotone(
    problem: DiscreteProblem, opts: SolveOptions | None = None, initial: np.ndarray | None = None
) -> tuple[FEField, SolveStats]:
    opts = opts or SolveOptions()
    space = problem.space
    tau = opts.resolved_tau(problem.alpha, problem.beta)
    q = contraction_factor(tau, problem.alpha, problem.beta)
    u = np.zeros(space.n_dofs) if initial is None else space.project(np.array(initial, dtype=float))

    history: list[float] = []
    max_iter = opts.max_iter
    k = 0
    while True:
        r = assemble_residual(problem, u)
        z = space.apply_inverse_laplacian(r, opts)
        norm = math.sqrt(max(0.0, float(r @ z)))
        history.append(norm)
        if max_iter is None:
            max_iter = _auto_max_iter(norm, opts.tol, q)
        if norm <= opts.tol:
            break
        if k >= max_iter:
            stats = SolveStats(k, norm, history, tau, q)
            raise NonConvergenceError(
                f"no convergence after {k} iterations (residual {norm:.3e} > {opts.tol:.1e})", stats
            )
        u = space.project(u - tau * z)
        k += 1
    log.debug("monotone solve: %d iterations, residual %.3e", k, history[-1])
    return FEField(space.mesh, space.to_nodal(u)), SolveStats(k, history[-1], history, tau, q)


def _auto_max_iter(r0: float, tol: float, q: float) -> int:
    if r0 <= tol or q <= 0.0:
        return 200
    need = math.log(tol / r0) / math.log(q)
    return max(200, int(1.5 * need) + 10)


def energy_terms(problem: DiscreteProblem, u: FEField) -> tuple[float, float]:
    """``(||Du||^2_{L^2}, <f, u>)`` for the a-priori estimate ``alpha ||Du||^2 <= <f, u>``."""
    quad = problem.space.quadrature
    g = quad.gradient(u.values)
    energy = quad.integrate(np.sum(g * g, axis=-1))
    work = float(problem.load @ problem.space.from_field(u))
    return energy, work


_space_lock = threading.Lock()


def space_for(mesh: StructuredMesh) -> FESpace:
    """The mesh's FESpace, built once and kept on the mesh so the factorization is reused."""
    space = getattr(mesh, "_fe_space", None)
    if space is None:
        with _space_lock:
            space = getattr(mesh, "_fe_space", None)
            if space is None:
                space = FESpace(mesh)
                space._factor  # noqa: B018 - factorize eagerly, outside worker threads
                mesh._fe_space = space
    return space
