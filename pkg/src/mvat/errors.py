"""Exception types shared across the package."""


class MvatError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MvatError):
    """Tensor shapes do not satisfy an operation's contract."""


class DomainError(MvatError):
    """Input values outside an operation's mathematical domain (log, pow, div)."""


class GraphError(MvatError):
    """Misuse of the autodiff tape (non-scalar loss, repeated backward)."""


class AudioError(MvatError):
    """Malformed or unsupported audio data or WAV file."""


class SignalError(MvatError):
    """Invalid signal-processing input (zero power, length mismatch)."""


class ConfigError(MvatError):
    """Invalid or incomplete run configuration."""


class CheckpointError(MvatError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class TrainingDiverged(MvatError):
    """Training loss became non-finite."""
