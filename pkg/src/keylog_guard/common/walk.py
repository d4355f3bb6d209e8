"""Depth-first file tree walk shared by the signature and heuristic scanners."""
from __future__ import annotations

import logging
import os
import stat
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

from .errors import UsageError

SYMLINK_SKIPPED = "symlink-skipped"
NOT_REGULAR = "not-a-regular-file"

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class WalkEntry:
    """A regular file to inspect (``reason`` is None) or a path that was skipped."""

    path: str
    reason: Optional[str] = None

    @property
    def is_file(self) -> bool:
        return self.reason is None


def describe_os_error(exc: OSError) -> str:
    return f"{type(exc).__name__}: {exc.strerror or exc}"


def walk_files(root: Union[str, Path]) -> Iterator[WalkEntry]:
    """Yield every regular file under ``root`` plus one entry per skipped path.

    Symbolic links are never followed. Directory entries are visited in name
    order; callers still sort their reports.
    """
    root_path = os.fspath(root)
    try:
        root_stat = os.lstat(root_path)
    except FileNotFoundError as exc:
        raise UsageError(f"scan root does not exist: {root_path}") from exc
    except OSError as exc:
        raise UsageError(f"cannot inspect scan root {root_path}: {describe_os_error(exc)}") from exc

    if stat.S_ISLNK(root_stat.st_mode):
        LOGGER.warning("Not following symlink %s", root_path)
        yield WalkEntry(root_path, SYMLINK_SKIPPED)
        return
    if stat.S_ISREG(root_stat.st_mode):
        yield WalkEntry(root_path)
        return
    if not stat.S_ISDIR(root_stat.st_mode):
        yield WalkEntry(root_path, NOT_REGULAR)
        return
    yield from _walk_directory(root_path)


def _walk_directory(directory: str) -> Iterator[WalkEntry]:
    try:
        with os.scandir(directory) as iterator:
            entries = sorted(iterator, key=lambda entry: entry.name)
    except OSError as exc:
        LOGGER.warning("Cannot list %s: %s", directory, exc)
        yield WalkEntry(directory, describe_os_error(exc))
        return

    for entry in entries:
        try:
            if entry.is_symlink():
                LOGGER.warning("Not following symlink %s", entry.path)
                yield WalkEntry(entry.path, SYMLINK_SKIPPED)
            elif entry.is_dir(follow_symlinks=False):
                yield from _walk_directory(entry.path)
            elif entry.is_file(follow_symlinks=False):
                yield WalkEntry(entry.path)
            else:
                yield WalkEntry(entry.path, NOT_REGULAR)
        except OSError as exc:
            # vanished between listing and stat
            yield WalkEntry(entry.path, describe_os_error(exc))


__all__ = ["NOT_REGULAR", "SYMLINK_SKIPPED", "WalkEntry", "describe_os_error", "walk_files"]
