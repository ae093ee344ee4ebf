"""Exception hierarchy shared across the package."""


class DualCycleError(Exception):
    """Base class for all package errors."""


class ParameterError(DualCycleError, ValueError):
    """An argument violates an operation's precondition."""


class BoundsError(ParameterError, IndexError):
    """A slice index lies outside the volume along the named axis."""

    def __init__(self, axis, index, size):
        self.axis = axis
        self.index = index
        self.size = size
        super().__init__(f"index {index} out of bounds for axis {axis!r} of size {size}")


class VolumeIOError(DualCycleError):
    """Base class for RV1 parse errors."""


class FormatError(VolumeIOError):
    """The file does not start with the RV1 magic bytes."""


class HeaderError(VolumeIOError):
    """The JSON header is missing, truncated, or malformed."""


class UnsupportedVersionError(VolumeIOError):
    """The header declares a format version or dtype this reader cannot handle."""


class PayloadSizeError(VolumeIOError):
    """The payload length disagrees with the declared dimensions."""


class DivergenceError(DualCycleError):
    """An iterative reconstruction blew up."""

    def __init__(self, iteration, max_value):
        self.iteration = iteration
        self.max_value = max_value
        super().__init__(f"diverged at iteration {iteration} (max value {max_value:.3g})")


class PhantomGenerationError(DualCycleError):
    """A phantom came out empty."""


class NormalizationError(DualCycleError):
    """Min-max normalization of a constant volume was requested."""


class TrainingFault(DualCycleError):
    """Training produced a non-finite loss.

    ``component`` names the loss term or module that failed and
    ``last_good`` holds the most recent finite state (a checkpoint dict or a
    path on disk), if any.
    """

    def __init__(self, component, step, last_good=None):
        self.component = component
        self.step = step
        self.last_good = last_good
        super().__init__(f"non-finite value in {component} at step {step}")


class CheckpointMismatchError(DualCycleError):
    """A checkpoint does not fit the architecture it is being loaded into."""

    def __init__(self, diffs):
        self.diffs = diffs
        lines = "\n".join(f"  {d}" for d in diffs)
        super().__init__(f"checkpoint does not match model architecture:\n{lines}")


class ConfigError(DualCycleError):
    """An experiment configuration failed validation."""
