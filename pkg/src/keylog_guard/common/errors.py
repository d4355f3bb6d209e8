"""Exception hierarchy shared by every keylog_guard module.

Each class carries an ``exit_code`` that only the CLI reads:
1 usage, 2 I/O, 3 protocol or format problems.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from keylog_guard.monitor.events import EventScript

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PROTOCOL = 3


class KeylogGuardError(Exception):
    exit_code = EXIT_PROTOCOL


class UsageError(KeylogGuardError):
    exit_code = EXIT_USAGE


class ScriptParseError(KeylogGuardError, ValueError):
    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class CaptureError(KeylogGuardError):
    exit_code = EXIT_IO

    def __init__(self, message: str, *, script: "EventScript") -> None:
        super().__init__(message)
        self.script = script


class HillKeyError(KeylogGuardError, ValueError):
    pass


class DimensionError(HillKeyError):
    pass


class CodecError(KeylogGuardError, ValueError):
    def __init__(self, message: str, *, offset: int) -> None:
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class DecryptError(KeylogGuardError):
    pass


class ModularInverseError(KeylogGuardError, ArithmeticError):
    pass


class BlobFormatError(KeylogGuardError, ValueError):
    pass


class FrameError(KeylogGuardError):
    pass


class FrameFormatError(FrameError):
    pass


class FrameVersionError(FrameError):
    pass


class FrameTruncatedError(FrameError):
    pass


class FrameTooLargeError(FrameError):
    pass


class LogFormatError(KeylogGuardError):
    def __init__(self, message: str, *, offset: int) -> None:
        super().__init__(f"byte offset {offset}: {message}")
        self.offset = offset


class ContentError(KeylogGuardError):
    pass


class ServerStartupError(KeylogGuardError):
    exit_code = EXIT_IO


class TransportError(KeylogGuardError):
    pass


class DeliveryError(TransportError):
    def __init__(self, message: str, *, acked: int) -> None:
        super().__init__(f"{message} ({acked} frame(s) acknowledged)")
        self.acked = acked


class SignatureParseError(KeylogGuardError, ValueError):
    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line = line


class RuleParseError(KeylogGuardError, ValueError):
    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line = line


class AllowlistError(KeylogGuardError, ValueError):
    pass


class ReportWriteError(KeylogGuardError, OSError):
    exit_code = EXIT_IO

    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"cannot write {path}: {reason}")
        self.path = path


__all__ = [
    "EXIT_IO",
    "EXIT_PROTOCOL",
    "EXIT_USAGE",
    "AllowlistError",
    "BlobFormatError",
    "CaptureError",
    "CodecError",
    "ContentError",
    "DecryptError",
    "DeliveryError",
    "DimensionError",
    "FrameError",
    "FrameFormatError",
    "FrameTooLargeError",
    "FrameTruncatedError",
    "FrameVersionError",
    "HillKeyError",
    "KeylogGuardError",
    "LogFormatError",
    "ModularInverseError",
    "ReportWriteError",
    "RuleParseError",
    "ScriptParseError",
    "ServerStartupError",
    "SignatureParseError",
    "TransportError",
    "UsageError",
]
