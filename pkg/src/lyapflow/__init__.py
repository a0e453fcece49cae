"""Lyapunov spectra of stochastic differential equations via flow simulation.

The package simulates stochastic flows together with their tangent and
inverse-tangent frames, estimates Lyapunov spectra (renormalized QR,
exterior-power growth, time-one invariant-measure averaging), samples
invariant measures, and runs coefficient-perturbation experiments that probe
the continuity and Lipschitz/Hoelder regularity of the exponents.
"""

from . import coefficients, lab, linalg, lyapunov, measure, sde
from .coefficients import (
    CoefficientField,
    PerturbationFamily,
    build_perturbation_family,
    check_monotonicity,
    empirical_lpp_norm,
    parse_field,
    verify_almost_uniform,
)
from .lab import (
    ExperimentReport,
    SimConfig,
    VerdictPolicy,
    emit_report,
    run_continuity_experiment,
    run_lipschitz_experiment,
)
from .lyapunov import (
    LyapunovEstimate,
    ScalarEstimate,
    check_moment_bound,
    check_subadditivity,
    estimate_spectrum_qr,
    estimate_wedge_sum,
    furstenberg_estimate,
)
from .measure import (
    EmpiricalMeasure,
    check_contraction,
    sample_invariant_measure,
    weak_distance,
)
from .sde import (
    BrownianPath,
    TangentFrames,
    integrate_flow,
    integrate_tangent,
    sample_brownian,
)

__version__ = "0.1.0"

__all__ = [
    "BrownianPath",
    "CoefficientField",
    "EmpiricalMeasure",
    "ExperimentReport",
    "LyapunovEstimate",
    "PerturbationFamily",
    "ScalarEstimate",
    "SimConfig",
    "TangentFrames",
    "VerdictPolicy",
    "build_perturbation_family",
    "check_contraction",
    "check_moment_bound",
    "check_monotonicity",
    "check_subadditivity",
    "coefficients",
    "emit_report",
    "empirical_lpp_norm",
    "estimate_spectrum_qr",
    "estimate_wedge_sum",
    "furstenberg_estimate",
    "integrate_flow",
    "integrate_tangent",
    "lab",
    "linalg",
    "lyapunov",
    "measure",
    "parse_field",
    "run_continuity_experiment",
    "run_lipschitz_experiment",
    "sample_brownian",
    "sample_invariant_measure",
    "sde",
    "verify_almost_uniform",
    "weak_distance",
]
