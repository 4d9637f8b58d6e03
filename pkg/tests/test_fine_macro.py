import math

import numpy as np
import pytest

from monoscale.fine import ResolutionError, frozen_coefficient_check, resolution_check, solve_oscillatory
from monoscale.homogenized import HomogenizedMap, audit_properties, build_table
from monoscale.loads import Load, sine_load
from monoscale.macro import UnauditedMapError, solve_homogenized
from monoscale.mesh import Box, FEField, build_macro_mesh
from monoscale.operators import CellProfile, make_spec
from monoscale.solver import SolveOptions

ONE = Load("constant", 1.0)


@pytest.mark.parametrize("n,eps,ok", [(128, 1 / 8, True), (64, 1 / 8, True), (16, 1 / 8, False), (512, 1 / 64, True)])
def test_resolution_check(n, eps, ok):
    mesh = build_macro_mesh(Box.unit(1), n)
    if ok:
        resolution_check(mesh, eps)
    else:
        with pytest.raises(ResolutionError, match="n_per_side >= 64"):
            resolution_check(mesh, eps)


@pytest.mark.parametrize("eps", [0.0, -0.5])
def test_nonpositive_epsilon(eps):
    with pytest.raises((ValueError, ResolutionError)):
        resolution_check(build_macro_mesh(Box.unit(1), 64), eps)


def test_fine_homogeneous_manufactured(homogeneous_1d):
    mesh = build_macro_mesh(Box.unit(1), 128)
    u, _ = solve_oscillatory(homogeneous_1d, 1 / 8, mesh, sine_load(1))
    err = FEField(mesh, u.values - np.sin(np.pi * mesh.nodes[:, 0])).l2_norm()
    assert err < 1e-4


def test_fine_zero_load(two_phase_1d):
    mesh = build_macro_mesh(Box.unit(1), 64)
    u, _ = solve_oscillatory(two_phase_1d, 1 / 8, mesh, Load("constant", 0.0))
    assert np.all(u.values == 0.0)


def test_fine_two_phase_close_to_homogenized(two_phase_1d):
    mesh = build_macro_mesh(Box.unit(1), 512)
    u_h, _ = solve_oscillatory(two_phase_1d, 1 / 32, mesh, ONE)
    x = mesh.nodes[:, 0]
    err = FEField(mesh, u_h.values - (x - x**2) / 3).l2_norm()
    assert err < 5e-3


def test_frozen_coefficient_bound(continuous_1d):
    mesh = build_macro_mesh(Box.unit(1), 256)
    u_h, _ = solve_oscillatory(continuous_1d, 1 / 16, mesh, ONE)
    for k in (2, 4):
        res = frozen_coefficient_check(continuous_1d, 1 / 16, mesh, ONE, k, u_h=u_h)
        assert res["measured"] <= res["bound"]


def test_frozen_coefficient_needs_modulus(two_phase_1d):
    mesh = build_macro_mesh(Box.unit(1), 64)
    with pytest.raises(ValueError):
        frozen_coefficient_check(two_phase_1d, 1 / 8, mesh, ONE, 2)


@pytest.fixture(scope="module")
def audited_table():
    spec = make_spec("linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0)))
    b = HomogenizedMap(spec, 32)
    assert audit_properties(b, 1.0, 3.0, None, 20, seed=0).passed
    return build_table(b, [np.arange(-10.0, 10.01, 0.25)])


def test_macro_requires_audit(two_phase_1d):
    with pytest.raises(UnauditedMapError):
        solve_homogenized(HomogenizedMap(two_phase_1d, 16), build_macro_mesh(Box.unit(1), 8), ONE)


def test_macro_closed_form(audited_table):
    mesh = build_macro_mesh(Box.unit(1), 64)
    u, stats = solve_homogenized(audited_table, mesh, ONE)
    x = mesh.nodes[:, 0]
    assert np.max(np.abs(u.values - (x - x**2) / 3)) < 1e-9
    h = np.array(stats.history)
    assert np.all(h[1:] <= stats.factor * h[:-1] + 1e-3 * h[:-1])


def test_macro_zero_load(audited_table):
    u, _ = solve_homogenized(audited_table, build_macro_mesh(Box.unit(1), 16), Load("constant", 0.0))
    assert np.all(u.values == 0.0)


def test_macro_identity_manufactured(homogeneous_1d):
    b = HomogenizedMap(homogeneous_1d, 8)
    errs = []
    for n in (16, 32):
        mesh = build_macro_mesh(Box.unit(1), n)
        u, _ = solve_homogenized(b, mesh, sine_load(1), SolveOptions(tau=1.0), override=True)
        errs.append(FEField(mesh, u.values - np.sin(np.pi * mesh.nodes[:, 0])).l2_norm())
    assert math.log2(errs[0] / errs[1]) > 1.8
