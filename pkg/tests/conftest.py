import numpy as np
import pytest

from monoscale.mesh import Box
from monoscale.operators import CellProfile, XModulation, make_spec


@pytest.fixture
def two_phase_1d():
    """c(y) = 1 on [0, 1/2), 3 on [1/2, 1); b(xi) = 1.5 xi."""
    return make_spec("linear_tensor", 1, coefficient=CellProfile("layered", (1.0, 3.0)))


@pytest.fixture
def homogeneous_1d():
    return make_spec("linear_tensor", 1)


@pytest.fixture
def nonlinear_1d():
    return make_spec(
        "nonlinear_isotropic", 1, coefficient=CellProfile("smooth", (2.0, 1.0)), theta=CellProfile("constant", (1.0,))
    )


@pytest.fixture
def continuous_1d():
    """Linear layered spec modulated by 1 + sin(2 pi x) / 2."""
    return make_spec(
        "linear_tensor",
        1,
        coefficient=CellProfile("layered", (1.0, 3.0)),
        modulation=XModulation("c", 1.0, 0.5),
        domain=Box.unit(1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion for the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {name} ({detail})")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
