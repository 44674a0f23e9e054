"""Exception types shared across the workbench.

The CLI maps these onto its exit-code contract: config problems exit 2,
missing upstream artifacts exit 3, numeric failures during training exit 4.
"""


class ToolskillError(Exception):
    """Base class for all workbench errors."""


class DomainError(ToolskillError):
    """A value is outside the domain an operation is defined on."""


class InputError(ToolskillError):
    """Inputs are malformed (shape/channel mismatch, NaN action, ...)."""


class ConfigError(ToolskillError):
    """Experiment configuration is invalid."""


class MissingInputError(ToolskillError):
    """A required upstream artifact (dataset, params, rollout) is absent."""


class NumericalError(ToolskillError):
    """Training or simulation produced non-finite values."""

    def __init__(self, message, epoch=None, frame=None):
        super().__init__(message)
        self.epoch = epoch
        self.frame = frame


class MetricError(ToolskillError):
    """A metric is undefined for the given record (e.g. no contact frames)."""
