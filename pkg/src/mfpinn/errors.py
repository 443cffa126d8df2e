"""Exception hierarchy shared by every module."""


class MfpinnError(Exception):
    """Base class; ``code`` is the machine-readable tag printed by the CLI."""

    code = "error"


class ConfigurationError(MfpinnError, ValueError):
    code = "configuration"


class DimensionError(MfpinnError, ValueError):
    code = "dimension"


class DomainError(MfpinnError, ValueError):
    code = "domain"


class SamplingError(MfpinnError, ValueError):
    code = "sampling"


class MetricError(MfpinnError, ValueError):
    code = "metric"


class NumericError(MfpinnError, ArithmeticError):
    code = "numeric"

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


class SolverError(MfpinnError, RuntimeError):
    code = "solver"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingError(MfpinnError, RuntimeError):
    code = "training"

    def __init__(self, message, term=None, step=None, last_good=None):
        super().__init__(message)
        self.term = term
        self.step = step
        self.last_good = last_good
