"""
Error types raised by the laboratory.

Every error carries the process exit code the command line reports for it,
the same way an HTTP handler carries a status code.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class LabException(Exception):
    exit_code = 1

    def __init__(self, detail: str, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ValidationFailure(LabException):
    """Bad input: malformed config, invalid parameters, failed verification."""
    exit_code = EXIT_VALIDATION


class NumericalFailure(LabException):
    """A computation produced something it must not (non-finite state, no convergence)."""
    exit_code = EXIT_NUMERICAL


class DimensionMismatch(ValidationFailure):
    pass


class ConvergenceFailure(NumericalFailure):
    pass


class CflViolation(NumericalFailure):
    pass


class CensoredRun(NumericalFailure):
    pass
