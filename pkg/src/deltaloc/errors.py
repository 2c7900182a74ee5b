"""Exception types shared across the package.

Everything raised on purpose derives from DeltaLocError so callers can
catch library failures without swallowing genuine bugs.
"""


class DeltaLocError(Exception):
    """Base class for all errors raised by deltaloc."""


class ShapeError(DeltaLocError, ValueError):
    """Operands have incompatible array shapes. Message names both shapes."""


class RankError(DeltaLocError, ValueError):
    """An array has the wrong number of dimensions for the operation."""


class TapeError(DeltaLocError, RuntimeError):
    """Backward pass requested for a tensor not recorded on the given tape."""


class DomainError(DeltaLocError, ValueError):
    """A numeric argument is outside the range the operation supports."""


class OutOfBandError(DomainError):
    """Latitude outside the supported transverse Mercator band."""


class ProjectionDistortionError(DomainError):
    """Points span too much longitude for a single-zone planar approximation."""


class EmptyInputError(DeltaLocError, ValueError):
    """An operation that needs at least one element received an empty input."""


class AlignmentError(DeltaLocError, ValueError):
    """Two sequences that must be index-aligned have different lengths."""


class SizeError(DeltaLocError, ValueError):
    """An image is too small for the requested crop or resize."""


class ConfigError(DeltaLocError, ValueError):
    """A configuration value or combination of values is invalid."""


class ManifestError(DeltaLocError, ValueError):
    """A trajectory manifest file is malformed. Message names the bad row."""


class IncompleteSampleError(DeltaLocError, ValueError):
    """A sample is missing a field (truth, raw fix, target) the caller needs."""


class InsufficientDataError(DeltaLocError, ValueError):
    """Too few samples to carry out the requested split or training run."""


class DivergenceError(DeltaLocError, RuntimeError):
    """Training produced a non-finite loss. Carries epoch and batch indices."""

    def __init__(self, epoch: int, batch: int, loss_value: float):
        self.epoch = epoch
        self.batch = batch
        self.loss_value = loss_value
        super().__init__(
            f"non-finite training loss {loss_value!r} at epoch {epoch}, batch {batch}; "
            f"reduce the learning rate or check the input data"
        )
