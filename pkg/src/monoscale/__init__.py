"""Numerical homogenization of periodic nonlinear monotone operators.

Cell problems, the homogenized flux ``b(x, xi)``, oscillatory and homogenized
Dirichlet solves, and the two-scale corrector ``P_h``.
"""

from .cell import CellSolution, oracle_cell_1d, solve_cell
from .config import ConfigError, ExperimentConfig
from .corrector import CorrectorField, StepField, apply_Mh, build_corrector, build_gamma, corrector_error
from .fine import ResolutionError, frozen_coefficient_check, resolution_check, solve_oscillatory
from .homogenized import (
    CacheFormatError,
    ExtrapolationError,
    HomogenizedMap,
    audit_properties,
    build_table,
    eval_b,
)
from .loads import Load
from .macro import UnauditedMapError, solve_homogenized
from .mesh import Box, CellCover, FEField, MeshError, build_cell_cover, build_cell_mesh, build_macro_mesh
from .operators import (
    CellProfile,
    ModulusSpec,
    MonotoneMapSpec,
    StructureError,
    XModulation,
    eval_a,
    freeze_x,
    make_spec,
    piecewise_spec,
    validate_structure,
)
from .solver import NonConvergenceError, SetupError, SolveOptions, SolveStats, solve_monotone

__version__ = "0.1.0"
