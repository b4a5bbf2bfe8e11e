"""Exception types shared across the package."""


class VarcastError(Exception):
    """Base class for all library errors."""


class DimensionError(VarcastError):
    """Shapes or axes do not line up for the requested operation."""


class NumericDomainError(VarcastError):
    """An operand is outside the mathematical domain of an operation."""


class ContractError(VarcastError):
    """A caller violated an API precondition (non-scalar loss, empty tape, ...)."""


class UnsupportedDownsampleError(VarcastError):
    """Nearest-neighbor interpolation only upsamples; shrinking is rejected."""


class WindowTooShortError(VarcastError):
    """Normalization needs at least two time steps per window."""


class HierarchyTooDeepError(VarcastError):
    """The latent ladder would run out of time steps before the top layer."""


class ConfigError(VarcastError):
    """Invalid or inconsistent run configuration; message names the field."""


class DataError(VarcastError):
    """Base class for dataset construction problems."""


class IngestionError(DataError):
    """A CSV row could not be parsed; message carries the line number."""


class ChannelError(DataError):
    """A channel holds no usable values (all NaN)."""


class WindowError(DataError):
    """The series is too short for the requested window geometry."""


class SplitError(DataError):
    """A chronological segment cannot hold a single window."""


class EmptyDatasetError(DataError):
    """An evaluation split holds no windows."""


class RangeError(DataError):
    """A forecast origin does not leave room for a full input window."""


class CheckpointError(VarcastError):
    """Checkpoint file is corrupt or incompatible with the configuration."""


class DivergenceError(VarcastError):
    """A loss term became NaN during training.

    Carries the name of the offending term and the last finite log record.
    """

    def __init__(self, term: str, last_record: dict | None = None):
        super().__init__(f"training diverged: loss term '{term}' is NaN")
        self.term = term
        self.last_record = last_record
