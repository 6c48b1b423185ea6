"""Discrete minimizers and free-boundary diagnostics for the vectorial Bernoulli problem."""

from .blowup import (
    BoundaryPointReport,
    ClassifyConfig,
    Stratum,
    blowup,
    classify,
    classify_all,
    rank_estimate,
    stratify,
    uniqueness_criterion,
)
from .diagnostics import (
    acf,
    coarea_perimeter,
    constant_sign_component,
    density,
    flatness,
    ratio_fields,
    viscosity_slope,
    weiss,
    weiss_profile,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    NoBoundaryError,
    NotFlatError,
    NotLinearError,
    ResolutionError,
    VecBernError,
)
from .fields import (
    EnergyBreakdown,
    Grid,
    PositivityMask,
    VectorField,
    energy,
    gradient_sq,
    positivity_mask,
    rescale,
)
from .oracles import OracleCase, energy_compare, halfplane, linear, oracle_1d
from .solver import (
    BoundaryDatum,
    SolveConfig,
    SolveReport,
    harmonic_replace,
    relax_step,
    solve,
    trim,
)

__version__ = "0.1.0"
