"""Exception hierarchy shared by every module.

The CLI maps ``ConfigurationError`` to exit status 2 and ``NumericError``
to exit status 3.
"""


class StoNetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StoNetError, ValueError):
    """Invalid configuration, hyperparameter or wiring."""


class DimensionError(StoNetError, ValueError):
    """Array shapes do not agree with the declared architecture."""


class NumericError(StoNetError, ArithmeticError):
    """Non-finite input or an update that produced NaN/inf."""

    def __init__(self, message, stage=None, epoch=None, step=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.step = step

    def context(self):
        return {"stage": self.stage, "epoch": self.epoch, "step": self.step}


class DegenerateFitError(StoNetError, ValueError):
    """A propensity fit was asked to separate a single class."""


class SchemaError(StoNetError, ValueError):
    """A CSV file does not match its declared column roles."""


class CheckpointError(StoNetError, ValueError):
    """Checkpoint version mismatch or checksum failure."""
