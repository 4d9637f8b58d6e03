"""The homogenized flux ``b(x, xi)`` as a memoized map, its audit and its table form."""

from __future__ import annotations

import csv
import io
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cell import CellSolution, solve_cell
from .mesh import Box, CellMesh
from .operators import XI_RANGE, ModulusSpec, MonotoneMapSpec
from .solver import SolveOptions

AUDIT_TOL = 1e-6
ZERO_TOL = 1e-10


class ExtrapolationError(ValueError):
    pass


class CacheFormatError(ValueError):
    pass


def quantize(xi) -> tuple[float, ...]:
    """Cache key of a gradient: components rounded to 12 significant digits."""
    return tuple(float(f"{float(v):.12g}") for v in np.atleast_1d(xi))


def continuity_constant(alpha: float, beta: float) -> float:
    """``C = 2 (beta/alpha)^2 (1 + (beta/alpha)^2)`` of the x-continuity bound on ``b``."""
    r = (beta / alpha) ** 2
    return 2.0 * r * (1.0 + r)


@dataclass
class _Table:
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    interpolator: RegularGridInterpolator


class HomogenizedMap:
    """``b(x, xi)`` computed from cell solves.

    ``x`` handling follows the spec's x-structure: x-independent specs ignore
    it (key ``const``); piecewise specs key on the part index (an integer or a
    point inside the part); continuous specs key on the point itself, which is
    the anchor at which ``a`` is frozen.
    """

    def __init__(
        self,
        spec: MonotoneMapSpec,
        cell_n: int | CellMesh,
        opts: SolveOptions | None = None,
        threads: int = 1,
    ):
        self.spec = spec
        self.cell_mesh = cell_n if isinstance(cell_n, CellMesh) else CellMesh(spec.dim, cell_n)
        if self.cell_mesh.dim != spec.dim:
            raise ValueError("cell mesh dimension does not match the spec")
        self.opts = opts or SolveOptions()
        self.threads = max(1, int(threads))
        self.mode = "direct"
        self.alpha = spec.alpha
        self.beta = spec.beta
        self.audit: PropertyAuditReport | None = None
        self._b: dict[tuple[str, tuple[float, ...]], np.ndarray] = {}
        self._solutions: dict[tuple[str, tuple[float, ...]], CellSolution] = {}
        self._lock = threading.Lock()
        self._tables: dict[str, _Table] = {}
        self.table_grid: tuple[tuple[float, ...], ...] | None = None
        self.table_probe_error: float | None = None
        self.cell_solves = 0

    # constants of b
    @property
    def b_alpha(self) -> float:
        return self.alpha

    @property
    def b_beta(self) -> float:
        return self.beta**2 / self.alpha

    @property
    def dim(self) -> int:
        return self.spec.dim

    def x_key(self, x) -> str:
        spec = self.spec
        if spec.x_structure == "constant":
            return "const"
        if spec.x_structure == "piecewise":
            if isinstance(x, (int, np.integer)):
                idx = int(x)
            elif isinstance(x, str) and x.startswith("part:"):
                idx = int(x[5:])
            else:
                idx = int(spec.part_index(np.asarray(x, dtype=float).reshape(spec.dim)))
            if not 0 <= idx < len(spec.parts):
                raise ValueError(f"{x!r} is not in any part")
            return f"part:{idx}"
        if isinstance(x, str) and x.startswith("x:"):
            return x
        if x is None:
            raise ValueError("continuous specs need an anchor point")
        pt = np.asarray(x, dtype=float).reshape(spec.dim)
        return "x:" + ";".join(repr(float(v)) for v in pt)

    def _x_arg(self, key: str):
        if key == "const":
            return None
        if key.startswith("part:"):
            return int(key[5:])
        return np.array([float(v) for v in key[2:].split(";")])

    def cell_solution(self, x, xi) -> CellSolution:
        """Cell solution at ``(x, xi)``, memoized on ``(x key, quantized xi)``."""
        key = (self.x_key(x), quantize(xi))
        sol = self._solutions.get(key)
        if sol is None:
            sol = solve_cell(self.spec, self._x_arg(key[0]), xi, self.cell_mesh, self.opts)
            with self._lock:
                self.cell_solves += 1
                self._solutions.setdefault(key, sol)
                self._b.setdefault(key, sol.averaged_flux)
            sol = self._solutions[key]
        return sol

    def eval_b(self, x, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(self.dim)
        xkey = self.x_key(x)
        if self.mode == "table":
            return self._interpolate(xkey, xi[None, :])[0]
        key = (xkey, quantize(xi))
        hit = self._b.get(key)
        if hit is not None:
            return hit.copy()
        return self.cell_solution(xkey, xi).averaged_flux.copy()

    def eval_b_many(self, xkeys, xis: np.ndarray) -> np.ndarray:
        """``b`` at many ``(x key, xi)`` pairs; ``xkeys`` is one key or one per row."""
        xis = np.asarray(xis, dtype=float).reshape(-1, self.dim)
        if isinstance(xkeys, str) or xkeys is None or np.isscalar(xkeys):
            keys = [self.x_key(xkeys)] * xis.shape[0]
        else:
            keys = [self.x_key(k) for k in xkeys]
        out = np.empty_like(xis)
        if self.mode == "table":
            groups: dict[str, list[int]] = {}
            for i, k in enumerate(keys):
                groups.setdefault(k, []).append(i)
            for k, rows in groups.items():
                out[rows] = self._interpolate(k, xis[rows])
            return out
        todo = [(k, xi) for k, xi in zip(keys, xis) if (k, quantize(xi)) not in self._b]
        self._solve_all(todo)
        for i, (k, xi) in enumerate(zip(keys, xis)):
            out[i] = self._b[(k, quantize(xi))]
        return out

    def _solve_all(self, pairs) -> None:
        unique = {}
        for k, xi in pairs:
            unique.setdefault((k, quantize(xi)), (k, xi))
        jobs = list(unique.values())
        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(lambda kx: self.cell_solution(*kx), jobs))
        else:
            for k, xi in jobs:
                self.cell_solution(k, xi)

    def _interpolate(self, xkey: str, xis: np.ndarray) -> np.ndarray:
        table = self._tables.get(xkey)
        if table is None:
            raise KeyError(f"no table for x key {xkey!r}")
        lo = np.array([a[0] for a in table.axes])
        hi = np.array([a[-1] for a in table.axes])
        if np.any(xis < lo) or np.any(xis > hi):
            raise ExtrapolationError(f"xi outside the table range [{lo.tolist()}, {hi.tolist()}]")
        if self.dim == 1:
            return np.interp(xis[:, 0], table.axes[0], table.values[:, 0])[:, None]
        return table.interpolator(xis)

    # cache persistence
    def export_cache(self, path) -> int:
        """Write ``x_key, xi_0.., b_0..`` rows; returns the row count."""
        d = self.dim
        header = ["x_key"] + [f"xi_{i}" for i in range(d)] + [f"b_{i}" for i in range(d)]
        rows = sorted(self._b.items(), key=lambda kv: (kv[0][0], kv[0][1]))
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for (xkey, xi), b in rows:
            writer.writerow([xkey] + [repr(v) for v in xi] + [repr(float(v)) for v in b])
        _atomic_write(path, buf.getvalue())
        return len(rows)

    def import_cache(self, path) -> int:
        """Load rows written by :meth:`export_cache`; all-or-nothing."""
        d = self.dim
        parsed = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CacheFormatError(f"{path}: line 1: missing header row") from None
            expected = ["x_key"] + [f"xi_{i}" for i in range(d)] + [f"b_{i}" for i in range(d)]
            if header != expected:
                raise CacheFormatError(f"{path}: line 1: expected header {expected}, got {header}")
            for row in reader:
                line = reader.line_num
                if len(row) != 1 + 2 * d:
                    raise CacheFormatError(f"{path}: line {line}: expected {1 + 2 * d} fields, got {len(row)}")
                try:
                    xkey = self.x_key(row[0])
                    xi = tuple(float(v) for v in row[1 : 1 + d])
                    b = np.array([float(v) for v in row[1 + d :]])
                except ValueError as exc:
                    raise CacheFormatError(f"{path}: line {line}: {exc}") from None
                if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(b))):
                    raise CacheFormatError(f"{path}: line {line}: non-finite value")
                parsed[(xkey, quantize(xi))] = b
        with self._lock:
            self._b.update(parsed)
        return len(parsed)

    def cached_keys(self):
        return list(self._b)


def _atomic_write(path, text: str) -> None:
    import os
    import tempfile

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def eval_b(hmap: HomogenizedMap, x, xi) -> np.ndarray:
    return hmap.eval_b(x, xi)


@dataclass
class PropertyAuditReport:
    monotonicity_margin: float
    lipschitz_excess: float
    zero_norm: float
    x_continuity_excess: float | None
    n_samples: int
    n_x_pairs: int
    seed: int
    alpha: float
    beta: float
    constant_C: float
    tol: float = AUDIT_TOL
    zero_tol: float = ZERO_TOL
    details: dict = field(default_factory=dict)

    @property
    def verdicts(self) -> dict[str, bool]:
        return {
            "monotonicity": self.monotonicity_margin >= -self.tol,
            "lipschitz": self.lipschitz_excess <= self.tol,
            "zero": self.zero_norm <= self.zero_tol,
            "x_continuity": self.x_continuity_excess is None or self.x_continuity_excess <= self.tol,
        }

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "details"}
        out["verdicts"] = self.verdicts
        out["passed"] = self.passed
        return out


def _sample_points(rng: np.random.Generator, domain: Box, n: int) -> np.ndarray:
    return rng.uniform(np.array(domain.lower), np.array(domain.upper), size=(n, domain.dim))


def audit_properties(
    hmap: HomogenizedMap,
    alpha: float,
    beta: float,
    modulus: ModulusSpec | None,
    n_samples: int,
    seed: int,
    n_x_pairs: int = 20,
    domain: Box | None = None,
    scale: float = 1.0,
) -> PropertyAuditReport:
    """Sample the four properties of ``b``: monotonicity with ``alpha``, Lipschitz
    with ``beta**2 / alpha``, ``b(x, 0) = 0`` and the x-continuity bound with
    ``C = 2 (beta/alpha)^2 (1 + (beta/alpha)^2)``.

    ``xi`` pairs are uniform in ``[-10, 10]^n``; x points uniform in ``domain``.
    """
    if hmap.mode != "direct":
        raise ValueError("audits need a direct-mode map")
    spec = hmap.spec
    domain = domain or Box.unit(spec.dim)
    d = spec.dim
    ss = np.random.SeedSequence(seed)
    rng_xi, rng_x, rng_xc = (np.random.Generator(np.random.Philox(s)) for s in ss.spawn(3))

    xi1 = rng_xi.uniform(-XI_RANGE, XI_RANGE, size=(n_samples, d))
    xi2 = rng_xi.uniform(-XI_RANGE, XI_RANGE, size=(n_samples, d))
    if spec.x_structure == "constant":
        keys = ["const"] * n_samples
    else:
        xs = _sample_points(rng_x, domain, max(1, n_x_pairs))
        keys = [hmap.x_key(xs[i % len(xs)]) for i in range(n_samples)]

    b1 = hmap.eval_b_many(keys, xi1)
    b2 = hmap.eval_b_many(keys, xi2)
    dxi = xi1 - xi2
    dxi2 = np.sum(dxi**2, axis=1)
    margin = np.sum((b1 - b2) * dxi, axis=1) - alpha * dxi2
    lip_const = beta**2 / alpha
    excess = np.linalg.norm(b1 - b2, axis=1) - lip_const * np.sqrt(dxi2)

    zero_keys = sorted(set(keys))
    zero = hmap.eval_b_many(zero_keys, np.zeros((len(zero_keys), d)))
    zero_norm = float(np.max(np.linalg.norm(zero, axis=1)))

    C = continuity_constant(alpha, beta)
    x_excess = None
    if spec.x_structure == "continuous" and modulus is not None and n_x_pairs > 0:
        xa = _sample_points(rng_xc, domain, n_x_pairs)
        xb = _sample_points(rng_xc, domain, n_x_pairs)
        xi = rng_xc.uniform(-XI_RANGE, XI_RANGE, size=(n_x_pairs, d))
        ba = hmap.eval_b_many([hmap.x_key(p) for p in xa], xi)
        bb = hmap.eval_b_many([hmap.x_key(p) for p in xb], xi)
        lhs = np.sum((ba - bb) ** 2, axis=1)
        rhs = modulus(np.linalg.norm(xa - xb, axis=1)) * C * np.sum(xi**2, axis=1)
        x_excess = float(np.max(lhs - rhs))

    report = PropertyAuditReport(
        monotonicity_margin=float(np.min(margin)),
        lipschitz_excess=float(np.max(excess)),
        zero_norm=zero_norm,
        x_continuity_excess=x_excess,
        n_samples=int(n_samples),
        n_x_pairs=int(n_x_pairs),
        seed=int(seed),
        alpha=float(alpha),
        beta=float(beta),
        constant_C=C,
        tol=AUDIT_TOL * scale,
    )
    if report.passed:
        hmap.audit = report
    return report


def build_table(hmap: HomogenizedMap, xi_grid, x_keys=None, n_probe: int = 16) -> HomogenizedMap:
    """Table-mode copy of ``hmap`` with ``b`` precomputed on a tensor xi grid.

    The probe error is the largest deviation between interpolated and directly
    solved ``b`` at up to ``n_probe`` cell midpoints per x key.
    """
    d = hmap.dim
    if len(xi_grid) != d:
        raise ValueError(f"need {d} knot vectors, got {len(xi_grid)}")
    axes = []
    for knots in xi_grid:
        k = np.asarray(knots, dtype=float)
        if k.ndim != 1 or k.size < 2 or np.any(np.diff(k) <= 0):
            raise ValueError("each xi axis needs at least two strictly increasing knots")
        axes.append(k)
    spec = hmap.spec
    if x_keys is None:
        if spec.x_structure == "constant":
            x_keys = ["const"]
        elif spec.x_structure == "piecewise":
            x_keys = list(range(len(spec.parts)))
        else:
            raise ValueError("continuous specs need explicit x keys (anchor points)")
    keys = [hmap.x_key(x) for x in x_keys]

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    tables = {}
    for key in keys:
        vals = hmap.eval_b_many(key, pts).reshape(tuple(a.size for a in axes) + (d,))
        interp = RegularGridInterpolator(tuple(axes), vals, method="linear", bounds_error=True)
        tables[key] = _Table(tuple(axes), vals, interp)

    out = HomogenizedMap.__new__(HomogenizedMap)
    out.__dict__.update(hmap.__dict__)
    out.mode = "table"
    out._tables = tables
    out.table_grid = tuple(tuple(a.tolist()) for a in axes)

    mids = np.stack([m.ravel() for m in np.meshgrid(*[0.5 * (a[1:] + a[:-1]) for a in axes], indexing="ij")], axis=1)
    step = max(1, math.ceil(mids.shape[0] / n_probe))
    probes = mids[::step]
    err = 0.0
    for key in keys:
        exact = hmap.eval_b_many(key, probes)
        approx = out._interpolate(key, probes)
        err = max(err, float(np.max(np.abs(exact - approx))))
    out.table_probe_error = err
    return out
