"""Exception hierarchy shared by the library and the command line tool.

Each class carries the process exit code the CLI reports for it.
"""


class VortexGasError(Exception):
    exit_code = 1
    reason = "error"


class InvalidSpecError(VortexGasError, ValueError):
    """A mollifier, measure or configuration block is malformed."""

    exit_code = 2
    reason = "config_invalid"


class InvalidArgumentError(VortexGasError, ValueError):
    exit_code = 2
    reason = "invalid_argument"


class InvalidFilamentError(InvalidArgumentError):
    """Filament parameters violate ``0 < ell <= sqrt(T) <= 1``."""

    reason = "invalid_filament"


class DivergentMomentError(InvalidSpecError):
    """A gamma-moment is infinite because an atom is not integrable at ell -> 0."""

    reason = "divergent_moment"


class BudgetExceededError(VortexGasError):
    exit_code = 3
    reason = "budget_exceeded"


class MarginViolationError(InvalidArgumentError):
    """A probe sits too close to the edge of the localization window."""

    reason = "margin_violation"


class FitDomainError(VortexGasError):
    exit_code = 4
    reason = "fit_domain"
