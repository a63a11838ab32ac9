"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI:
  1 validation / bad input, 2 I/O, 3 verification failure, 4 internal invariant.
"""


class PosePasteError(Exception):
    exit_code = 1


class MalformedInputError(PosePasteError):
    """Input data violates a documented precondition (bad label value, bbox out of bounds, ...)."""
    exit_code = 1


class ConfigError(PosePasteError):
    """Configuration is inconsistent or references unknown entities."""
    exit_code = 1


class DomainError(PosePasteError):
    """Numeric argument outside the operation's domain (s <= 0, shape mismatch, ...)."""
    exit_code = 1


class UnavailableError(PosePasteError):
    """A required resource is empty or missing (e.g. sampling from an empty pool)."""
    exit_code = 1


class PoolIOError(PosePasteError):
    exit_code = 2


class CorruptManifestError(PoolIOError):
    """Manifest unreadable, malformed, or a checksum does not match."""


class MissingBlobError(PoolIOError):
    """Manifest references a patch file that does not exist."""


class VersionMismatchError(PoolIOError):
    """Pool or checkpoint was written by an incompatible format version."""


class TapeStateError(PosePasteError):
    """Tape used in the wrong lifecycle state (e.g. backward before finalize)."""
    exit_code = 4


class TrainingError(PosePasteError):
    """Training-time failure such as a non-finite gradient."""
    exit_code = 4


class VerificationError(PosePasteError):
    """A gradient-check suite exceeded its tolerance."""
    exit_code = 3
