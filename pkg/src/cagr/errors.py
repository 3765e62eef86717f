"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: DataError -> 3, NumericError -> 4.
"""


class CagrError(Exception):
    """Base class for all package errors."""


class DataError(CagrError):
    """Malformed input files, dangling ids, invalid weights, shape mismatches."""


class FormatError(DataError):
    """Bad model-file magic, version, or truncation."""


class NumericError(CagrError):
    """NaN parameters, failed gradient checks, or other numeric failures."""


class ConvergenceError(NumericError):
    """Iterative method did not converge; carries the last residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
