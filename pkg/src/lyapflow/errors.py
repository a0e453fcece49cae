"""Exception types shared across the package."""


class LyapflowError(Exception):
    """Base class for package-specific failures."""


class ExpressionParseError(LyapflowError, ValueError):
    """Coefficient expression could not be parsed.

    Carries the 1-based character position of the offending token when known.
    """

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class ExpressionNameError(ExpressionParseError):
    """Identifier in a coefficient expression is not a variable, t, or a known parameter."""


class UnsupportedExpressionError(LyapflowError, ValueError):
    """Operation (typically differentiation of min/max) is not defined for this expression."""


class FamilySpecError(LyapflowError, ValueError):
    """Perturbation-family specification is malformed (e.g. overlapping support intervals)."""


class DegenerateFrameError(LyapflowError, ValueError):
    """Matrix is numerically rank-deficient; the tangent frame has collapsed."""


class EstimationFailedError(LyapflowError, RuntimeError):
    """Spectrum estimation gave up after repeated frame restarts."""


class ExplosionError(LyapflowError, RuntimeError):
    """Trajectory left the admissible region (|x| > 1e12)."""

    def __init__(self, step, norm=None):
        self.step = step
        self.norm = norm
        detail = f" (|x| ~ {norm:.3e})" if norm is not None else ""
        super().__init__(f"trajectory exploded at step {step}{detail}")


class FrameUnderflowError(LyapflowError, RuntimeError):
    """All tangent columns underflowed; use the renormalized spectrum estimator instead."""

    def __init__(self, step):
        self.step = step
        super().__init__(
            f"tangent frame underflowed at step {step}; "
            "use the renormalized estimator (estimate_spectrum_qr) for long horizons"
        )


class NonDissipativeError(LyapflowError, RuntimeError):
    """Trajectory exploded while sampling the invariant measure.

    The drift is probably not dissipative; run check_monotonicity on the field.
    """


class PreconditionError(LyapflowError, ValueError):
    """A documented operation precondition does not hold."""
