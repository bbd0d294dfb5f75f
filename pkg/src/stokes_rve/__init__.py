"""Numerical homogenization of Stokes suspensions of rigid spherical particles."""

from .config import RunConfig, load_config, parse_config
from .corrector import CorrectorSolution, StokesProblem, solve_corrector, solve_eps_problem, solve_weak_sedimentation
from .effective import (
    EffectiveCoefficients,
    StrainBasis,
    compute_effective,
    dilute_slope,
    effective_pressure_coefficient,
    effective_tensor,
    ensemble_stats,
)
from .errors import (
    ConfigParseError,
    GridMismatch,
    InconsistentInputs,
    InvalidParams,
    JammingFailure,
    NoConvergence,
    ResolutionTooCoarse,
    ShapeMismatch,
    SingularSystem,
    StokesRVEError,
)
from .geometry import InclusionSet, perturbed_lattice_generate, restrict_to_box, rsa_generate, validate
from .grid import Grid, LabelField, rasterize
from .twoscale import TwoScaleReport, prepare_cell, run_ladder, solve_homogenized, two_scale_errors

__version__ = "0.1.0"
