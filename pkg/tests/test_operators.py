import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoscale.mesh import Box
from monoscale.operators import (
    CellProfile,
    ModulusSpec,
    MonotoneMapSpec,
    StructureError,
    XModulation,
    box_partition,
    eval_a,
    freeze_x,
    make_spec,
    natural_constants,
    piecewise_spec,
    suggest_modulus,
    validate_structure,
)


@pytest.mark.parametrize(
    "spec",
    [
        make_spec("linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0))),
        make_spec("linear_tensor", 2, coefficient=CellProfile("checkerboard", (1.0, 4.0)), matrix=[[2, 1], [1, 2]]),
        make_spec("nonlinear_isotropic", 2, theta=CellProfile("smooth", (0.5, 0.4))),
    ],
)
def test_zero_gradient_gives_zero_flux(spec):
    y = np.random.default_rng(0).random((10, spec.dim))
    out = eval_a(spec, None, y, np.zeros((10, spec.dim)))
    assert np.all(out == 0.0)


def test_two_phase_substitution(two_phase_1d):
    assert eval_a(two_phase_1d, None, [0.25], [2.0]) == pytest.approx([2.0])
    assert eval_a(two_phase_1d, None, [0.75], [2.0]) == pytest.approx([6.0])
    # y is taken modulo 1
    assert eval_a(two_phase_1d, None, [1.75], [2.0]) == pytest.approx([6.0])


def test_nonlinear_isotropic_value():
    spec = make_spec("nonlinear_isotropic", 2)
    assert eval_a(spec, None, [0.3, 0.3], [3.0, 0.0]) == pytest.approx([3.75, 0.0])


def test_non_finite_gradient_rejected(two_phase_1d):
    with pytest.raises(ValueError):
        eval_a(two_phase_1d, None, [0.2], [np.nan])


def test_natural_constants():
    assert natural_constants("linear_tensor", CellProfile("layered", (1.0, 3.0))) == (1.0, 3.0)
    assert natural_constants("nonlinear_isotropic", CellProfile(), CellProfile()) == (1.0, 2.0)
    a, b = natural_constants("linear_tensor", CellProfile(), matrix=[[2, 1], [1, 2]])
    assert (a, b) == pytest.approx((1.0, 3.0))


def test_alpha_above_beta_is_structural_failure():
    with pytest.raises(StructureError) as info:
        MonotoneMapSpec("linear_tensor", 1, alpha=2.0, beta=1.0)
    assert info.value.condition


def test_overstated_alpha_detected_by_sampling():
    spec = make_spec("linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0)), alpha=1.5, beta=3.0)
    with pytest.raises(StructureError) as info:
        validate_structure(spec, 200, seed=0)
    assert info.value.condition == "monotonicity"


def test_understated_beta_detected_by_sampling():
    spec = make_spec("nonlinear_isotropic", 1, alpha=1.0, beta=1.2)
    with pytest.raises(StructureError) as info:
        validate_structure(spec, 200, seed=0)
    assert info.value.condition == "lipschitz"


@pytest.mark.parametrize("dim", [1, 2])
def test_validate_structure_passes_builtin(dim):
    spec = make_spec(
        "nonlinear_isotropic",
        dim,
        theta=CellProfile("smooth", (0.5, 0.4)),
        modulation=XModulation("theta", 0.5, 0.4),
        domain=Box.unit(dim),
        alpha=1.0,
        beta=2.0,
    )
    report = validate_structure(spec, 200, seed=3)
    assert report.alpha_observed >= 1.0 - 1e-10
    assert report.beta_observed <= 2.0 + 1e-10
    assert report.zero_violation == 0.0
    assert report.modulus_violation <= 1e-10


def test_validate_structure_is_seeded():
    spec = make_spec("nonlinear_isotropic", 1, theta=CellProfile("smooth", (0.5, 0.4)))
    assert validate_structure(spec, 50, 7) == validate_structure(spec, 50, 7)


def test_freeze_constant_spec_unchanged(two_phase_1d, rng):
    frozen = freeze_x(two_phase_1d, box_partition(Box.unit(1), 2))
    y, xi = rng.random((20, 1)), rng.normal(size=(20, 1))
    x = rng.random((20, 1))
    assert np.array_equal(eval_a(frozen, x, y, xi), eval_a(two_phase_1d, x, y, xi))


def test_freeze_single_cell_is_anchor_value(continuous_1d, rng):
    anchor = np.array([0.3])
    frozen = freeze_x(continuous_1d, [(Box.unit(1), anchor)])
    x, y, xi = rng.random((30, 1)), rng.random((30, 1)), rng.normal(size=(30, 1))
    expected = eval_a(continuous_1d, np.broadcast_to(anchor, x.shape), y, xi)
    assert np.array_equal(eval_a(frozen, x, y, xi), expected)


def test_frozen_invariant_exact_at_anchors(continuous_1d, rng):
    partition = box_partition(Box.unit(1), 4)
    frozen = freeze_x(continuous_1d, partition)
    for _, anchor in partition:
        y, xi = rng.random((10, 1)), rng.normal(size=(10, 1))
        x = np.broadcast_to(anchor, y.shape)
        assert np.array_equal(eval_a(frozen, x, y, xi), eval_a(continuous_1d, x, y, xi))


def test_frozen_deviation_bounded_by_modulus(continuous_1d, rng):
    k = 2
    frozen = freeze_x(continuous_1d, box_partition(Box.unit(1), k))
    omega = continuous_1d.modulus
    x, y, xi = rng.random((2000, 1)), rng.random((2000, 1)), rng.uniform(-10, 10, (2000, 1))
    dev = np.sum((eval_a(frozen, x, y, xi) - eval_a(continuous_1d, x, y, xi)) ** 2, axis=1)
    assert np.all(dev <= omega(1.0 / k) * np.sum(xi**2, axis=1) + 1e-12)


def test_freeze_anchor_outside_box_rejected(continuous_1d):
    with pytest.raises(ValueError):
        freeze_x(continuous_1d, [(Box((0.0,), (0.5,)), np.array([0.7])), (Box((0.5,), (1.0,)), np.array([0.7]))])


def test_piecewise_parts_select_by_location():
    left = make_spec("linear_tensor", 1, coefficient=CellProfile("constant", (1.0,)))
    right = make_spec("linear_tensor", 1, coefficient=CellProfile("constant", (5.0,)))
    spec = piecewise_spec([(Box((0.0,), (0.5,)), left), (Box((0.5,), (1.0,)), right)])
    assert spec.x_structure == "piecewise"
    assert (spec.alpha, spec.beta) == (1.0, 5.0)
    out = eval_a(spec, [[0.25], [0.75]], [[0.1], [0.1]], [[1.0], [1.0]])
    assert out[:, 0] == pytest.approx([1.0, 5.0])


def test_piecewise_family_mismatch_rejected():
    a = make_spec("linear_tensor", 1)
    b = make_spec("nonlinear_isotropic", 1)
    with pytest.raises(ValueError):
        piecewise_spec([(Box((0.0,), (0.5,)), a), (Box((0.5,), (1.0,)), b)])


def test_modulus_forms():
    lin = ModulusSpec("linear", 2.0)
    assert lin(0.0) == 0.0 and lin(0.5) == pytest.approx(1.0)
    hol = ModulusSpec("power", 1.0, 0.5)
    assert hol(0.25) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ModulusSpec("power", 1.0, 1.5)


def test_suggested_modulus_covers_modulation():
    spec = make_spec(
        "linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0)), modulation=XModulation("c", 1.0, 0.5)
    )
    om = suggest_modulus(spec, Box.unit(1))
    assert om.form == "linear"
    assert om.L == pytest.approx((2 * math.pi * 0.5 * 3.0) ** 2 * 1.0)


@settings(max_examples=60, deadline=None)
@given(
    xi1=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    xi2=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    y=st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=2),
)
def test_nonlinear_monotone_and_lipschitz(xi1, xi2, y):
    spec = make_spec("nonlinear_isotropic", 2, theta=CellProfile("smooth", (0.5, 0.4)))
    a1 = eval_a(spec, None, y, xi1)
    a2 = eval_a(spec, None, y, xi2)
    d = np.subtract(xi1, xi2)
    assert np.dot(a1 - a2, d) >= spec.alpha * np.dot(d, d) - 1e-9
    assert np.linalg.norm(a1 - a2) <= spec.beta * np.linalg.norm(d) + 1e-9
