"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid or unsupported configuration."""


class InputError(ValueError):
    """Array arguments with the wrong shape or length."""


class NumericalError(ArithmeticError):
    """Singular systems, degenerate columns or non-finite intermediates."""


class CapacityError(ValueError):
    """Exhaustive search requested on a problem that is too large."""


class FormatError(ValueError):
    """Malformed parameter file."""


class TrainingError(RuntimeError):
    """Training diverged. The per-epoch log is kept on ``.log``."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []
