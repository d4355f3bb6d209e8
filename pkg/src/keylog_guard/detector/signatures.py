"""Signature database scanner.

A signature database lists SHA-1 digests of known keylogger files, one per
line with an optional label. :func:`scan` walks a tree depth-first, hashes
every regular file (whole file, or only its leading header bytes) and reports
matches; per-file problems land in the report instead of aborting the scan.
"""
from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

UTC = timezone.utc
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from keylog_guard.common.config import DEFAULT_HEADER_LEN
from keylog_guard.common.errors import ReportWriteError, SignatureParseError, UsageError
from keylog_guard.common.walk import describe_os_error, walk_files

CHUNK_SIZE = 64 * 1024

AFFECTED_FILE = "affected.txt"
ERRORS_FILE = "errors.txt"
RESULT_FILE = "result.txt"

DEMO_SIGNATURES_PATH = Path(__file__).with_name("data") / "demo_signatures.txt"

LOGGER = logging.getLogger(__name__)


class DigestAlgo(str, Enum):
    SHA1 = "sha1"

    @property
    def hex_length(self) -> int:
        return hashlib.new(self.value).digest_size * 2


class HashMode(str, Enum):
    FULL_FILE = "full_file"
    HEADER_PREFIX = "header_prefix"


@dataclass(frozen=True, slots=True)
class DigestParams:
    algo: DigestAlgo = DigestAlgo.SHA1
    mode: HashMode = HashMode.FULL_FILE
    header_len: int = DEFAULT_HEADER_LEN

    def __post_init__(self) -> None:
        if self.header_len <= 0:
            raise UsageError(f"header_len must be positive, got {self.header_len}")


@dataclass(frozen=True, slots=True)
class SignatureDb:
    entries: Mapping[str, Optional[str]] = field(default_factory=dict)
    params: DigestParams = DigestParams()
    duplicates: int = 0

    @property
    def digest_algo(self) -> DigestAlgo:
        return self.params.algo

    @property
    def mode(self) -> HashMode:
        return self.params.mode

    @property
    def header_len(self) -> int:
        return self.params.header_len

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, digest: object) -> bool:
        return digest in self.entries

    def label_for(self, digest: str) -> Optional[str]:
        return self.entries.get(digest)

    def with_params(self, mode: HashMode, header_len: int = DEFAULT_HEADER_LEN) -> "SignatureDb":
        return replace(self, params=DigestParams(self.params.algo, mode, header_len))


def parse_signatures(
    lines: Iterable[str],
    params: DigestParams = DigestParams(),
) -> SignatureDb:
    pattern = re.compile(rf"[0-9a-f]{{{params.algo.hex_length}}}")
    entries: dict[str, Optional[str]] = {}
    duplicates = 0
    for line_number, raw_line in enumerate(lines, start=1):
        stripped = raw_line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 1)
        digest = parts[0].lower()
        if not pattern.fullmatch(digest):
            raise SignatureParseError(
                f"expected a {params.algo.hex_length}-character hex {params.algo.value} digest, got {parts[0]!r}",
                line=line_number,
            )
        label = parts[1].strip() if len(parts) > 1 else None
        if digest in entries:
            duplicates += 1
            LOGGER.warning("Duplicate signature %s on line %s ignored", digest, line_number)
            continue
        entries[digest] = label
    return SignatureDb(entries, params, duplicates)


def load_signatures(
    path: Union[str, Path],
    mode: HashMode = HashMode.FULL_FILE,
    header_len: int = DEFAULT_HEADER_LEN,
) -> SignatureDb:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise SignatureParseError(f"signature database {path} is not UTF-8 text: {exc}") from exc
    db = parse_signatures(text.splitlines(), DigestParams(DigestAlgo.SHA1, mode, header_len))
    LOGGER.info(
        "Loaded %s signature(s) from %s%s",
        len(db),
        path,
        f" ({db.duplicates} duplicate(s) collapsed)" if db.duplicates else "",
    )
    return db


def file_digest(path: Union[str, Path], params: DigestParams = DigestParams()) -> str:
    hasher = hashlib.new(params.algo.value)
    remaining = params.header_len if params.mode is HashMode.HEADER_PREFIX else None
    with open(path, "rb") as handle:
        while remaining is None or remaining > 0:
            size = CHUNK_SIZE if remaining is None else min(CHUNK_SIZE, remaining)
            chunk = handle.read(size)
            if not chunk:
                break
            hasher.update(chunk)
            if remaining is not None:
                remaining -= len(chunk)
    return hasher.hexdigest()


@dataclass(frozen=True, slots=True)
class AffectedFile:
    path: str
    digest: str
    label: Optional[str] = None


@dataclass(frozen=True, slots=True)
class ScanErrorEntry:
    path: str
    reason: str


@dataclass(slots=True)
class ScanReport:
    root: str
    affected: list[AffectedFile]
    scanned_count: int
    error_entries: list[ScanErrorEntry]
    started: datetime
    finished: datetime
    db_size: int = 0
    mode: HashMode = HashMode.FULL_FILE

    @property
    def affected_paths(self) -> list[str]:
        return [item.path for item in self.affected]


def _digest_or_error(path: str, params: DigestParams) -> tuple[str, Optional[str], Optional[str]]:
    try:
        return path, file_digest(path, params), None
    except OSError as exc:
        return path, None, describe_os_error(exc)


def scan(root: Union[str, Path], db: SignatureDb, workers: int = 1) -> ScanReport:
    """Hash every regular file under ``root`` and match it against ``db``."""
    if workers <= 0:
        raise UsageError("workers must be positive")
    started = datetime.now(UTC)
    root_text = str(root)

    files: list[str] = []
    error_entries: list[ScanErrorEntry] = []
    for entry in walk_files(root):
        if entry.is_file:
            files.append(entry.path)
        else:
            error_entries.append(ScanErrorEntry(entry.path, entry.reason))

    if workers > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda path: _digest_or_error(path, db.params), files))
    else:
        results = [_digest_or_error(path, db.params) for path in files]

    affected: list[AffectedFile] = []
    scanned = 0
    for path, digest, reason in results:
        if digest is None:
            LOGGER.warning("Cannot hash %s: %s", path, reason)
            error_entries.append(ScanErrorEntry(path, reason or "unreadable"))
            continue
        scanned += 1
        if digest in db:
            LOGGER.warning("Signature match: %s (%s)", path, db.label_for(digest) or digest)
            affected.append(AffectedFile(path, digest, db.label_for(digest)))

    affected.sort(key=lambda item: item.path)
    error_entries.sort(key=lambda item: item.path)
    report = ScanReport(
        root=root_text,
        affected=affected,
        scanned_count=scanned,
        error_entries=error_entries,
        started=started,
        finished=datetime.now(UTC),
        db_size=len(db),
        mode=db.mode,
    )
    LOGGER.info(
        "Scanned %s file(s) under %s: %s affected, %s error(s)",
        scanned,
        root_text,
        len(affected),
        len(error_entries),
    )
    return report


def format_affected(report: ScanReport) -> str:
    return "".join(f"{item.path}\t{item.digest}\t{item.label or ''}\n" for item in report.affected)


def format_errors(report: ScanReport) -> str:
    return "".join(f"{item.path}\t{item.reason}\n" for item in report.error_entries)


def format_result(report: ScanReport) -> str:
    lines = [
        f"root: {report.root}",
        f"signatures: {report.db_size}",
        f"mode: {report.mode.value}",
        f"scanned: {report.scanned_count}",
        f"affected: {len(report.affected)}",
        f"errors: {len(report.error_entries)}",
        f"started: {report.started.isoformat()}",
        f"finished: {report.finished.isoformat()}",
    ]
    return "\n".join(lines) + "\n"


def write_text_report(path: Path, content: str) -> Path:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(content)
    except OSError as exc:
        raise ReportWriteError(str(path), describe_os_error(exc)) from exc
    return path


def write_reports(report: ScanReport, out_dir: Union[str, Path]) -> list[Path]:
    """Write affected.txt, errors.txt and result.txt, even when lists are empty."""
    out_dir = Path(out_dir)
    written = [
        write_text_report(out_dir / AFFECTED_FILE, format_affected(report)),
        write_text_report(out_dir / ERRORS_FILE, format_errors(report)),
        write_text_report(out_dir / RESULT_FILE, format_result(report)),
    ]
    LOGGER.info("Wrote scan reports to %s", out_dir)
    return written


__all__ = [
    "AFFECTED_FILE",
    "DEMO_SIGNATURES_PATH",
    "ERRORS_FILE",
    "RESULT_FILE",
    "AffectedFile",
    "DigestAlgo",
    "DigestParams",
    "HashMode",
    "ScanErrorEntry",
    "ScanReport",
    "SignatureDb",
    "file_digest",
    "load_signatures",
    "parse_signatures",
    "scan",
    "write_reports",
]
