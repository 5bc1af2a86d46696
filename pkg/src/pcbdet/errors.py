"""Exception hierarchy shared by every module."""


class PCBDetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PCBDetError, ValueError):
    """Invalid configuration: bad shapes, out-of-range settings, missing inputs."""


class ContractError(PCBDetError, ValueError):
    """A function was called with inputs violating its documented preconditions."""


class NumericError(PCBDetError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class EvaluationError(PCBDetError):
    """Evaluation cannot be carried out (e.g. no ground truth at all)."""
