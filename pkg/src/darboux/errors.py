"""Exception and warning types shared across the package."""
from __future__ import annotations


class DarbouxError(Exception):
    """Base class for all errors raised by this package."""


class EvolutionOverflowError(DarbouxError, ValueError):
    """Time evolution factor exp(8 s^3 t) would overflow double precision."""

    def __init__(self, s_max: float, t: float):
        self.s_max = s_max
        self.t = t
        super().__init__(
            f"evolution factor exp(8 s^3 t) overflows for s_max={s_max!r}, t={t!r}"
        )


class InadmissibleMeasureError(DarbouxError, ValueError):
    """Perturbing measure fails an admissibility condition.

    Carries the full AdmissibilityReport as ``report``.
    """

    def __init__(self, report):
        self.report = report
        super().__init__(f"measure is not admissible: {report.summary()}")


class SingularSystemError(DarbouxError, ArithmeticError):
    """The discretized Fredholm system is numerically singular at (x, t)."""

    def __init__(self, x: float, t: float, cond_estimate: float):
        self.x = x
        self.t = t
        self.cond_estimate = cond_estimate
        super().__init__(
            f"singular kernel system at x={x!r}, t={t!r} "
            f"(condition estimate {cond_estimate:.3e})"
        )


class NonPositiveDeterminantError(DarbouxError, ArithmeticError):
    """det(I + K) is zero or negative where a positive determinant is required."""

    def __init__(self, x: float, t: float, sign: int):
        self.x = x
        self.t = t
        self.sign = sign
        super().__init__(
            f"det(I + K) has sign {sign:+d} at x={x!r}, t={t!r}; "
            "log-determinant route requires a positive determinant"
        )


class MixedSignWeightsError(DarbouxError, ValueError):
    """Closed-form log-det second derivative requires single-signed weights."""


class NearSingularWarning(UserWarning):
    """Kernel system condition estimate is large but still solvable."""
