import numpy as np
import pytest

from monoscale.corrector import StepField, apply_Mh, build_corrector, build_gamma, corrector_error
from monoscale.homogenized import HomogenizedMap
from monoscale.mesh import Box, FEField, MeshError, build_cell_cover, build_macro_mesh, l2_norm_gradient_diff


@pytest.fixture
def mesh():
    return build_macro_mesh(Box.unit(1), 64)


def test_constant_average(mesh):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    step = apply_Mh(lambda p: np.full_like(p, 2.5), cover, mesh)
    assert np.all(step.values == pytest.approx(2.5))


def test_linear_average_gives_midpoints(mesh):
    cover = build_cell_cover(Box.unit(1), 1 / 4)
    u = FEField.interpolate(mesh, lambda x: x[:, 0] ** 2 / 2)
    step = apply_Mh(u, cover)
    assert step.values[:, 0] == pytest.approx([1 / 8, 3 / 8, 5 / 8, 7 / 8], abs=1e-12)


def test_averaging_error_halves():
    mesh = build_macro_mesh(Box.unit(1), 512)
    g = lambda p: np.sin(3 * p)  # noqa: E731
    errs = []
    for eps in (1 / 8, 1 / 16, 1 / 32):
        step = apply_Mh(g, build_cell_cover(Box.unit(1), eps), mesh)
        quad = mesh.quadrature()
        pts = quad.points.reshape(-1, 1)
        diff = (step(pts) - g(pts)).reshape(quad.points.shape)
        errs.append(np.sqrt(quad.integrate(np.sum(diff**2, axis=-1))))
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert all(0.4 < r < 0.6 for r in ratios)


def test_step_field_zero_outside_cells():
    cover = build_cell_cover(Box.unit(1), 1 / 3.5)
    step = StepField(cover, np.ones((3, 1)))
    assert step(np.array([[0.95]]))[0, 0] == 0.0


def test_gamma_centres():
    gamma = build_gamma(build_cell_cover(Box.unit(1), 0.5))
    out = gamma(np.array([[0.1], [0.49], [0.5], [0.9]]))
    assert out[:, 0].tolist() == [0.25, 0.25, 0.75, 0.75]


def test_gamma_corner_rule():
    gamma = build_gamma(build_cell_cover(Box.unit(1), 0.25, anchor_rule="corner"))
    assert gamma(np.array([[0.3], [0.99]]))[:, 0].tolist() == [0.25, 0.75]


def test_homogeneous_corrector_is_step(homogeneous_1d, mesh):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    u = FEField.interpolate(mesh, lambda x: np.sin(np.pi * x[:, 0]))
    step = apply_Mh(u, cover)
    P = build_corrector(homogeneous_1d, cover, step, cell_mesh=16)
    pts = np.linspace(0.01, 0.99, 37)[:, None]
    assert P(pts) == pytest.approx(step(pts), abs=1e-12)


def test_zero_step_zero_corrector(two_phase_1d):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    P = build_corrector(two_phase_1d, cover, StepField(cover, np.zeros((8, 1))), cell_mesh=16)
    assert np.all(P(np.linspace(0, 1, 11)[:, None]) == 0.0)


def test_equal_cells_share_solutions(two_phase_1d):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    hmap = HomogenizedMap(two_phase_1d, 16)
    build_corrector(two_phase_1d, cover, StepField(cover, np.ones((8, 1))), hmap=hmap)
    assert hmap.cell_solves == 1


def test_identical_fields_zero_error(homogeneous_1d, mesh):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    u = FEField.interpolate(mesh, lambda x: x[:, 0] * (1 - x[:, 0]))
    P = build_corrector(homogeneous_1d, cover, apply_Mh(u, cover), cell_mesh=8)
    errs = corrector_error(u, u, P)
    assert errs.e_plain == 0.0
    # P = M_h Du for a homogeneous spec, so e_corr is the averaging error of Du
    assert 0 < errs.e_corr < 0.1


def test_misaligned_mesh_rejected(two_phase_1d):
    mesh = build_macro_mesh(Box.unit(1), 60)
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    u = FEField.zeros(mesh)
    P = build_corrector(two_phase_1d, cover, apply_Mh(u, cover), cell_mesh=16)
    with pytest.raises(MeshError):
        corrector_error(u, u, P)


def test_cell_energy_ratio_bounded(nonlinear_1d):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    vals = np.linspace(-6, 6, 8)[:, None]
    P = build_corrector(nonlinear_1d, cover, StepField(cover, vals), cell_mesh=32)
    assert P.cell_energy_ratio() <= (nonlinear_1d.beta / nonlinear_1d.alpha) ** 2 + 1e-6


def test_jensen_for_averages(mesh):
    cover = build_cell_cover(Box.unit(1), 1 / 8)
    u = FEField.interpolate(mesh, lambda x: np.sin(2 * x[:, 0]) * x[:, 0])
    assert apply_Mh(u, cover).l2_norm() <= l2_norm_gradient_diff(u, 0) + 1e-12
