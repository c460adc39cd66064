"""
psmamba_core.errors
~~~~~~~~~~~~~~~~~~~
Custom exception hierarchy for psmamba.

All psmamba exceptions inherit from PSMambaError so callers can catch the
full family with a single ``except PSMambaError`` clause while still
being able to discriminate at finer granularity.
"""

from __future__ import annotations


class PSMambaError(Exception):
    """Base class for all psmamba exceptions."""


class ShapeError(PSMambaError):
    """Raised when tensor shapes or channel counts do not line up.

    Attributes:
        expected: Shape (or shape fragment) the operation required.
        actual: Shape that was supplied.
    """

    def __init__(
        self,
        message: str,
        *,
        expected: tuple[int, ...] = (),
        actual: tuple[int, ...] = (),
    ) -> None:
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class PartitionError(PSMambaError):
    """Raised when a feature map cannot be split or a PatchSet cannot be merged.

    Attributes:
        level: Name of the split level involved.
        shape: Spatial shape (H, W) that was rejected.
    """

    def __init__(
        self,
        message: str,
        *,
        level: str = "",
        shape: tuple[int, ...] = (),
    ) -> None:
        super().__init__(message)
        self.level = level
        self.shape = shape


class CheckpointError(PSMambaError):
    """Raised when a checkpoint file cannot be written or read back.

    Attributes:
        path: File that was being read or written.
        record: Name of the offending record, if any.
    """

    def __init__(self, message: str, *, path: str = "", record: str = "") -> None:
        super().__init__(message)
        self.path = path
        self.record = record


class ConfigError(PSMambaError):
    """Raised for malformed or unknown entries in a key=value config file.

    Attributes:
        line_no: 1-based line number of the offending line (0 if unknown).
        key: Offending key, if one could be parsed.
    """

    def __init__(self, message: str, *, line_no: int = 0, key: str = "") -> None:
        super().__init__(message)
        self.line_no = line_no
        self.key = key


class DataError(PSMambaError):
    """Raised when an image folder is missing, empty, or entirely unreadable.

    Attributes:
        path: The folder or file that caused the failure.
    """

    def __init__(self, message: str, *, path: str = "") -> None:
        super().__init__(message)
        self.path = path


class GradcheckError(PSMambaError):
    """Raised when the finite-difference harness is used outside 64-bit mode."""
