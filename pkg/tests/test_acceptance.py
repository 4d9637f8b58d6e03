"""Acceptance criteria, one test each.

Each test records a PASS/FAIL line (shown in the terminal summary) and
asserts the same condition at the stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from monoscale.cell import corrector_energy_ratio, oracle_cell_1d, solve_cell
from monoscale.config import ExperimentConfig
from monoscale.fine import frozen_coefficient_check, solve_oscillatory
from monoscale.harness import history_contracts, run_experiment
from monoscale.loads import Load
from monoscale.mesh import Box, build_cell_mesh, build_macro_mesh
from monoscale.operators import CellProfile, XModulation, make_spec
from monoscale.solver import SolveOptions

HISTORIES = []  # every SolveStats produced here, for the contraction criterion

NONLINEAR = {
    "family": "nonlinear_isotropic",
    "coefficient": 1.0,
    "theta": {"kind": "smooth", "values": [0.5, 0.4]},
    "modulation": {"target": "theta", "mean": 0.5, "amplitude": 0.4},
    "alpha": 1.0,
    "beta": 2.0,
}
TWO_PHASE = {"family": "linear_tensor", "coefficient": {"kind": "layered", "values": [1, 3]}}


def convergence_config(out_dir):
    return ExperimentConfig.from_dict(
        {
            "kind": "convergence",
            "dim": 1,
            "operator": TWO_PHASE,
            "epsilons": ["1/8", "1/16", "1/32", "1/64"],
            "macro_n": 1024,
            "cell_n": 64,
            "load": {"kind": "constant", "value": 1.0},
            "n_samples": 50,
            "output_dir": str(out_dir),
        }
    )


@pytest.fixture(scope="module")
def convergence_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("convergence")
    t0 = time.perf_counter()
    first = run_experiment(convergence_config(root / "run1"))
    elapsed = time.perf_counter() - t0
    run_experiment(convergence_config(root / "run2"))
    return first, elapsed, root


@pytest.mark.parametrize("dim,cell_n", [(1, 64), (2, 32)])
def test_criterion_1_structure_audit(tmp_path, record_criterion, dim, cell_n):
    cfg = ExperimentConfig.from_dict(
        {
            "kind": "audit",
            "dim": dim,
            "operator": NONLINEAR,
            "cell_n": cell_n,
            "n_samples": 200,
            "n_x_pairs": 20,
            "output_dir": str(tmp_path),
        }
    )
    t0 = time.perf_counter()
    report = run_experiment(cfg, cache_path=tmp_path / "cache.csv")
    elapsed = time.perf_counter() - t0
    audit = report.extra["audit"]
    ok = (
        audit["monotonicity_margin"] >= -1e-6
        and audit["lipschitz_excess"] <= 1e-6
        and audit["zero_norm"] <= 1e-10
        and audit["x_continuity_excess"] is not None
        and audit["x_continuity_excess"] <= 1e-6
        and audit["constant_C"] == pytest.approx(40.0)
        and elapsed <= 300
    )
    detail = (
        f"{dim}D margin={audit['monotonicity_margin']:.3g} lip={audit['lipschitz_excess']:.3g} "
        f"zero={audit['zero_norm']:.3g} xcont={audit['x_continuity_excess']:.3g} t={elapsed:.1f}s"
    )
    assert record_criterion(1, "structure audit", ok, detail)


XI_SET = [-4.0, -1.0, 0.0, 0.5, 2.0, 8.0]


@pytest.mark.parametrize(
    "spec",
    [
        make_spec("linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0))),
        make_spec(
            "nonlinear_isotropic", 1, coefficient=CellProfile("smooth", (2.0, 1.0)), theta=CellProfile("layered", (0.2, 1.0))
        ),
    ],
    ids=["linear", "nonlinear"],
)
def test_criterion_2_oracle_equivalence(record_criterion, spec):
    mesh = build_cell_mesh(1, 256)
    worst = 0.0
    linear_dev = 0.0
    for xi in XI_SET:
        sol = solve_cell(spec, None, [xi], mesh)
        HISTORIES.append(sol.stats)
        b = sol.averaged_flux[0]
        ref = oracle_cell_1d(spec, None, xi)
        worst = max(worst, abs(b - ref) / abs(ref) if ref != 0 else abs(b))
        if spec.is_linear:
            linear_dev = max(linear_dev, abs(b - 1.5 * xi))
    ok = worst <= 1e-4 and linear_dev <= 1e-6
    assert record_criterion(2, "1D oracle equivalence", ok, f"{spec.family} rel={worst:.2e} lin_dev={linear_dev:.2e}")


def test_criterion_3_checkerboard(record_criterion):
    spec = make_spec("linear_tensor", 2, coefficient=CellProfile("checkerboard", (1.0, 4.0)))
    t0 = time.perf_counter()
    sol = solve_cell(spec, None, [1.0, 0.0], build_cell_mesh(2, 128))
    elapsed = time.perf_counter() - t0
    HISTORIES.append(sol.stats)
    rel = abs(sol.averaged_flux[0] - 2.0) / 2.0
    ok = rel <= 0.02 and elapsed <= 120
    assert record_criterion(3, "2D checkerboard", ok, f"b={sol.averaged_flux[0]:.5f} rel={rel:.2e} t={elapsed:.1f}s")


def test_criterion_4_corrector_energy(record_criterion):
    spec = make_spec(
        "nonlinear_isotropic",
        1,
        coefficient=CellProfile("constant", (1.0,)),
        theta=CellProfile("smooth", (0.5, 0.5)),
        alpha=1.0,
        beta=2.0,
    )
    mesh = build_cell_mesh(1, 64)
    rng = np.random.default_rng(np.random.SeedSequence(4))
    bound = (spec.beta / spec.alpha) ** 2
    worst = 0.0
    for xi1, xi2 in rng.uniform(-10, 10, size=(50, 2)):
        s1 = solve_cell(spec, None, [xi1], mesh)
        s2 = solve_cell(spec, None, [xi2], mesh)
        HISTORIES.extend([s1.stats, s2.stats])
        worst = max(worst, corrector_energy_ratio(s1, s2))
    assert record_criterion(4, "corrector energy bound", worst <= bound + 1e-6, f"max ratio={worst:.4f} bound={bound}")


def test_criterion_5_convergence_trend(record_criterion, convergence_runs):
    report, elapsed, _ = convergence_runs
    rows = report.rows
    e_corr = [r["e_corr"] for r in rows]
    e_plain = [r["e_plain"] for r in rows]
    l2 = [r["l2_error"] for r in rows]
    decreasing = all(b < a for a, b in zip(e_corr, e_corr[1:]))
    ratio = e_corr[-1] / e_corr[0]
    variation = (max(e_plain) - min(e_plain)) / max(e_plain)
    l2_decreasing = all(b < a for a, b in zip(l2, l2[1:]))
    ok = decreasing and ratio <= 0.35 and variation < 0.20 and l2_decreasing and elapsed <= 600 and report.passed
    detail = f"ratio={ratio:.3f} plain_var={variation:.3f} l2={[f'{v:.2e}' for v in l2]} t={elapsed:.1f}s"
    assert record_criterion(5, "corrector convergence trend", ok, detail)


def test_criterion_6_frozen_coefficient(record_criterion):
    spec = make_spec(
        "linear_tensor",
        1,
        coefficient=CellProfile("layered", (1.0, 3.0)),
        modulation=XModulation("c", 1.0, 0.5),
        domain=Box.unit(1),
    )
    assert spec.modulus.form == "linear"
    mesh = build_macro_mesh(Box.unit(1), 512)
    f = Load("constant", 1.0)
    u_h, stats = solve_oscillatory(spec, 1 / 16, mesh, f)
    HISTORIES.append(stats)
    ok = True
    parts = []
    for k in (2, 4):
        res = frozen_coefficient_check(spec, 1 / 16, mesh, f, k, u_h=u_h)
        ok = ok and res["measured"] <= res["bound"]
        parts.append(f"k={k} {res['measured']:.3e}<={res['bound']:.3e}")
    assert record_criterion(6, "frozen-coefficient estimate", ok, "; ".join(parts))


def test_criterion_7_contraction(record_criterion, convergence_runs):
    report = convergence_runs[0]
    # a nonlinear 2D solve with tau = 1/4, alpha = 1, beta = 2 so q = sqrt(0.75)
    spec = make_spec("nonlinear_isotropic", 2, theta=CellProfile("checkerboard", (0.0, 1.0)))
    sol = solve_cell(spec, None, [3.0, -1.0], build_cell_mesh(2, 16), SolveOptions(tau=0.25))
    assert sol.stats.factor == pytest.approx(math.sqrt(0.75))
    HISTORIES.append(sol.stats)
    worst = -math.inf
    for s in HISTORIES:
        h = np.asarray(s.history)
        if h.size > 1:
            worst = max(worst, float(np.max(h[1:] / h[:-1] - s.factor)))
    ok = all(history_contracts(s) for s in HISTORIES) and report.criteria["contraction"]
    detail = f"{len(HISTORIES)} histories + sweep, max(ratio - q)={worst:.2e}"
    assert record_criterion(7, "solver contraction", ok, detail)


def test_criterion_8_determinism(record_criterion, convergence_runs):
    root = convergence_runs[2]
    a = (root / "run1" / "table.csv").read_bytes()
    b = (root / "run2" / "table.csv").read_bytes()
    assert record_criterion(8, "byte-identical table.csv", a == b, f"{len(a)} bytes")


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
