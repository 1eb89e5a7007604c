"""Exception hierarchy for netchoice.

Every error raised on purpose by the package derives from NetChoiceError so
callers (and the CLI) can catch one base class and turn it into a clean exit.
"""


class NetChoiceError(Exception):
    """Base class for all netchoice errors."""


class ShapeError(NetChoiceError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericError(NetChoiceError, ValueError):
    """Non-finite values, or a numerically invalid operation."""


class DataError(NetChoiceError, ValueError):
    """Malformed input data: negative weights, bad cells, schema mismatch."""


class LoadError(DataError):
    """A dataset, manifest, or checkpoint failed to load; the message names
    the offending file location (row/column where applicable)."""


class ParameterError(NetChoiceError, ValueError):
    """An argument lies outside its documented domain."""


class ConfigError(NetChoiceError, ValueError):
    """Invalid run or model configuration."""


class IdentificationError(ConfigError):
    """A model specification is not econometrically identified."""


class StateError(NetChoiceError, RuntimeError):
    """An operation needs state that has not been produced yet, e.g.
    inference-mode normalization before any statistics were stored."""


class ConvergenceError(NetChoiceError, RuntimeError):
    """An iterative routine diverged or exhausted its iteration budget."""


class TrainingDivergedError(ConvergenceError):
    """Training aborted on a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None, param_norm=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norm = param_norm


class UnsupportedModelError(NetChoiceError, TypeError):
    """The requested quantity is not defined for this model family."""
