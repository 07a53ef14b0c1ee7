"""Exception taxonomy shared by all advstream modules."""


class AdvstreamError(Exception):
    """Base class for all advstream errors."""


class ConfigurationError(AdvstreamError):
    """Invalid static configuration: shapes, rates, hyperparameters."""


class UsageError(AdvstreamError):
    """API called out of order or with mismatched runtime state."""


class EmptyDataError(AdvstreamError):
    """An operation received no usable rows or samples."""


class DataSizeError(AdvstreamError):
    """Data too short for the requested buffer/stream configuration."""


class FormatError(AdvstreamError):
    """Malformed input file (header, delimiter, column layout)."""


class TrainingError(AdvstreamError):
    """Optimization failed (divergence, single-class labels, ...)."""


class AttackError(AdvstreamError):
    """Perturbation could not be generated (non-finite gradient)."""
