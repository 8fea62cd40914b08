"""Exception types raised across the package.

The CLI maps these onto exit codes (see `src.cli.main`).
"""


class ValencePulseError(Exception):
    """Base class for every error raised on purpose by this package."""


class ShapeError(ValencePulseError, ValueError):
    """Dimension mismatch; the message names the offending stage or dimension."""


class ManifestError(ValencePulseError, ValueError):
    """Malformed manifest/template input. `row` is the 1-based data row when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class AlignmentError(ValencePulseError, ValueError):
    pass


class MetricError(ValencePulseError, ValueError):
    pass


class TrainingError(ValencePulseError, RuntimeError):
    """Training aborted; carries the epoch and batch index where it happened."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)


class ConfigError(ValencePulseError, ValueError):
    pass


class FormatError(ValencePulseError, ValueError):
    """Bad magic string, header or payload length in a binary or image file."""


class ContextError(ValencePulseError, ValueError):
    """A backward pass was handed a context from a different or mismatched forward call."""


class GapError(ValencePulseError, ValueError):
    """A timeline has no present value to interpolate from."""


class FrozenModelError(ValencePulseError, RuntimeError):
    """Parameters of a model used as a frozen extractor changed during the call."""
