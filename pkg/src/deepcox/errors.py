"""Exception hierarchy shared by every deepcox module."""


class DeepCoxError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(DeepCoxError, ValueError):
    pass


class ParseError(DeepCoxError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DeepCoxError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(DeepCoxError, RuntimeError):
    def __init__(self, message, probes=None):
        self.probes = dict(probes or {})
        if probes:
            detail = ", ".join(f"rate={k:g}: {v:.4f}" for k, v in self.probes.items())
            message = f"{message} (probe censoring fractions: {detail})"
        super().__init__(message)


class DegenerateLikelihoodError(DeepCoxError, ValueError):
    """Raised when the partial likelihood has no event terms."""


class TrainingDivergedError(DeepCoxError, RuntimeError):
    def __init__(self, epoch, network=None):
        self.epoch = epoch
        self.network = network
        where = f" (network {network})" if network is not None else ""
        super().__init__(f"non-finite training loss at epoch {epoch}{where}")


class DegenerateDataError(DeepCoxError, RuntimeError):
    pass


class SeparationError(DeepCoxError, RuntimeError):
    """Monotone likelihood: the Newton iterates diverge."""


class DegenerateDesignError(DeepCoxError, ValueError):
    """Singular information matrix in the linear Cox fit."""


class ConvergenceError(DeepCoxError, RuntimeError):
    pass


class UndefinedMetricError(DeepCoxError, ValueError):
    pass


class InsufficientReplicationsError(DeepCoxError, ValueError):
    pass
