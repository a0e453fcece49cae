"""Coefficient fields, perturbation families, and coefficient measurements."""

from .expressions import (
    Expr,
    differentiate,
    evaluate,
    parse,
    simplify,
)
from .fields import (
    CoefficientField,
    FieldMetadata,
    FieldStructure,
    LppNorms,
    MapDelta,
    MonotonicityReport,
    check_monotonicity,
    diffusion_delta,
    drift_delta,
    empirical_lpp_norm,
    from_diagonal_schedule,
    monotonicity_quotient,
    parse_field,
)
from .families import (
    ALMOST_UNIFORM_TOL,
    AlmostUniformReport,
    PerturbationFamily,
    build_perturbation_family,
    verify_almost_uniform,
)
from .schedules import DiagonalSchedule, PiecewiseConstant

__all__ = [
    "ALMOST_UNIFORM_TOL",
    "AlmostUniformReport",
    "CoefficientField",
    "DiagonalSchedule",
    "Expr",
    "FieldMetadata",
    "FieldStructure",
    "LppNorms",
    "MapDelta",
    "MonotonicityReport",
    "PerturbationFamily",
    "PiecewiseConstant",
    "build_perturbation_family",
    "check_monotonicity",
    "differentiate",
    "diffusion_delta",
    "drift_delta",
    "empirical_lpp_norm",
    "evaluate",
    "from_diagonal_schedule",
    "monotonicity_quotient",
    "parse",
    "parse_field",
    "simplify",
    "verify_almost_uniform",
]
