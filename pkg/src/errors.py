"""
LDSeg - Error Types
Typed exceptions shared by every package. Each carries the CLI exit code used
when it reaches the command line surface.
"""


class LDSegError(Exception):
    """Base class for all LDSeg errors."""

    exit_code: int = 1


# ============ Validation ============

class ConfigError(LDSegError):
    """Invalid or unknown configuration key/value."""

    exit_code = 2


class DimensionError(LDSegError):
    """Shape or divisibility contract violated."""

    exit_code = 2


class RangeError(LDSegError):
    """Scalar argument outside its admissible range."""

    exit_code = 2


class OrderingError(LDSegError):
    """Timesteps given in the wrong order (e.g. t_prev >= t)."""

    exit_code = 2


class OutputExistsError(LDSegError):
    """Refusing to overwrite an existing output without --force."""

    exit_code = 2


# ============ Numerics / Training ============

class GraphNotRecordedError(LDSegError):
    """backward() called on a tensor with no recorded computation."""


class NonFiniteError(LDSegError):
    """NaN or Inf produced by a numeric operation."""


class DivergenceError(LDSegError):
    """Training loss became non-finite."""

    exit_code = 3


# ============ Checkpoints / Files ============

class CheckpointError(LDSegError):
    """Checkpoint incompatible with the requested model, variant or shape."""

    exit_code = 4


class FormatError(LDSegError):
    """Malformed file (TNSR, P5, LDSC, manifest)."""

    exit_code = 1


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class DtypeError(FormatError):
    """Unsupported dtype code."""


class TruncationError(FormatError):
    """File ends before its declared content."""


class HeaderError(FormatError):
    """Header present but malformed (bad token, overflow, bad JSON)."""


class VersionError(FormatError, CheckpointError):
    """Unsupported checkpoint format version."""

    exit_code = 4
