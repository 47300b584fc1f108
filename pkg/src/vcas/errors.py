"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: parameter/usage problems
exit 1, data problems (missing or malformed files, label mismatches)
exit 2, numerical failures (non-convergent eigensolves, NaN losses)
exit 3.
"""


class VcasError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(VcasError, ValueError):
    """Invalid argument or configuration value."""

    exit_code = 1


class DegenerateInputError(ParameterError):
    """Input is structurally valid but degenerate (e.g. a zero-norm row)."""


class DataError(VcasError):
    """Missing, malformed, or inconsistent data artifacts."""

    exit_code = 2


class NumericalError(VcasError):
    """Numerical failure: non-convergent eigensolve, NaN loss, overflow."""

    exit_code = 3
