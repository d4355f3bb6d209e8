"""dlt resources that load keylog_guard outputs into a destination (DuckDB by default).

``input_events`` is incremental: its resource state remembers the byte offset
just past the last loaded frame, so re-running against a growing server log
only loads frames appended since. Scan resources are snapshots and replace
their tables on every run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence, Union

import dlt

from keylog_guard.common.config import DEFAULT_HEADER_LEN
from keylog_guard.common.errors import UsageError
from keylog_guard.common.walk import describe_os_error, walk_files
from keylog_guard.detector.heuristics import DEFAULT_RULES_PATH, Allowlist, heuristic_scan, load_allowlist, load_rules
from keylog_guard.detector.signatures import HashMode, ScanErrorEntry, ScanReport, load_signatures, scan
from keylog_guard.monitor.hill import HillKey, load_key
from keylog_guard.monitor.transport import iter_log_batches

ALL_RESOURCE_NAMES = ("input_events", "affected_files", "scan_errors", "heuristic_findings")
SCAN_RESOURCES = ("affected_files", "scan_errors", "heuristic_findings")

LOGGER = logging.getLogger(__name__)


@dlt.resource(name="input_events", write_disposition="append")
def input_events(log_path: Union[str, Path], key: HillKey) -> Iterator[Mapping[str, Any]]:
    state = dlt.current.resource_state()
    start_offset = int(state.get("last_offset") or 0)
    log_size = Path(log_path).stat().st_size
    if start_offset > log_size:
        LOGGER.warning(
            "input_events: log %s shrank below saved offset %s; reloading from the start", log_path, start_offset
        )
        start_offset = 0

    rows = 0
    batches = 0
    for batch in iter_log_batches(log_path, key, start_offset):
        for index, event in enumerate(batch.script.events):
            yield {
                "frame_offset": batch.offset,
                "event_index": index,
                "timestamp_ms": event.timestamp_ms,
                "kind": event.kind.value,
                "key": event.key,
                "x": event.x,
                "y": event.y,
                "button": event.button.value if event.button else None,
            }
            rows += 1
        batches += 1
        state["last_offset"] = batch.end_offset

    _log_resource_stats("input_events", rows, state.get("last_offset"), batches)


@dataclass(slots=True)
class SignatureScan:
    """One signature scan of ``root``, shared by ``affected_files`` and ``scan_errors``.

    Without a signature database nothing is hashed; ``error_entries`` then
    only walks the tree and checks that each file can be opened.
    """

    root: Union[str, Path]
    signatures_path: Optional[Union[str, Path]] = None
    mode: str = HashMode.FULL_FILE.value
    header_len: int = DEFAULT_HEADER_LEN
    _report: Optional[ScanReport] = field(default=None, init=False, repr=False)

    def report(self) -> ScanReport:
        if self._report is None:
            if not self.signatures_path:
                raise UsageError("affected_files needs a signature database")
            db = load_signatures(self.signatures_path, HashMode(self.mode), self.header_len)
            self._report = scan(self.root, db)
        return self._report

    def error_entries(self) -> list[ScanErrorEntry]:
        if self.signatures_path:
            return self.report().error_entries
        return unreadable_entries(self.root)


def unreadable_entries(root: Union[str, Path]) -> list[ScanErrorEntry]:
    entries: list[ScanErrorEntry] = []
    for entry in walk_files(root):
        if not entry.is_file:
            entries.append(ScanErrorEntry(entry.path, entry.reason))
            continue
        try:
            with open(entry.path, "rb"):
                pass
        except OSError as exc:
            LOGGER.warning("Cannot open %s: %s", entry.path, exc)
            entries.append(ScanErrorEntry(entry.path, describe_os_error(exc)))
    return sorted(entries, key=lambda item: item.path)


@dlt.resource(name="affected_files", write_disposition="replace")
def affected_files(signature_scan: SignatureScan) -> Iterable[Mapping[str, Any]]:
    report = signature_scan.report()
    for item in report.affected:
        yield {
            "path": item.path,
            "digest": item.digest,
            "label": item.label,
            "mode": report.mode.value,
            "scanned_at": report.finished,
        }
    _log_resource_stats("affected_files", len(report.affected), None)


@dlt.resource(name="scan_errors", write_disposition="replace")
def scan_errors(signature_scan: SignatureScan) -> Iterable[Mapping[str, Any]]:
    entries = signature_scan.error_entries()
    for entry in entries:
        yield {"path": entry.path, "reason": entry.reason}
    _log_resource_stats("scan_errors", len(entries), None)


@dlt.resource(name="heuristic_findings", write_disposition="replace")
def heuristic_findings(
    root: Union[str, Path],
    rules_path: Union[str, Path] = DEFAULT_RULES_PATH,
    allowlist_path: Optional[Union[str, Path]] = None,
) -> Iterable[Mapping[str, Any]]:
    allowlist = load_allowlist(allowlist_path) if allowlist_path else Allowlist()
    report = heuristic_scan(root, load_rules(rules_path), allowlist)
    for finding in report.findings:
        yield {"path": finding.path, "score": finding.score, "tokens": ",".join(finding.tokens)}
    _log_resource_stats("heuristic_findings", len(report.findings), None)


@dlt.source(name="keylog_guard")
def keylog_guard_source(
    log_path: Optional[str] = None,
    key_path: Optional[str] = None,
    scan_root: Optional[str] = None,
    signatures_path: Optional[str] = None,
    rules_path: Optional[str] = None,
    allowlist_path: Optional[str] = None,
    mode: str = HashMode.FULL_FILE.value,
    header_len: int = DEFAULT_HEADER_LEN,
    resources_to_load: Optional[Sequence[str]] = None,
    key: Optional[HillKey] = None,
) -> Iterable:
    """Assemble the keylog_guard resources for dlt.

    Parameters
    ----------
    log_path, key_path:
        Server log and pre-shared Hill key file for ``input_events``. A loaded
        ``key`` may be passed instead of ``key_path``.
    scan_root:
        Tree scanned by ``affected_files``, ``scan_errors`` and ``heuristic_findings``.
    signatures_path:
        Signature database for ``affected_files``.
    rules_path, allowlist_path:
        Heuristic rules (bundled defaults when omitted) and optional allowlist.
    resources_to_load:
        Explicit subset of resource names. Resources whose inputs are missing
        are skipped with a warning.
    """
    selected = set(resources_to_load or ALL_RESOURCE_NAMES)

    if "input_events" in selected:
        if log_path and (key is not None or key_path):
            yield input_events(log_path=log_path, key=key if key is not None else load_key(key_path))
        else:
            LOGGER.warning("Skipping input_events: log_path and a key are required")

    if scan_root is None:
        skipped = sorted(selected.intersection(SCAN_RESOURCES))
        if skipped:
            LOGGER.warning("Skipping %s: scan_root is required", ", ".join(skipped))
        return

    signature_scan = SignatureScan(scan_root, signatures_path, mode, header_len)
    if "affected_files" in selected:
        if signatures_path:
            yield affected_files(signature_scan=signature_scan)
        else:
            LOGGER.warning("Skipping affected_files: signatures_path is required")

    if "scan_errors" in selected:
        yield scan_errors(signature_scan=signature_scan)

    if "heuristic_findings" in selected:
        yield heuristic_findings(
            root=scan_root, rules_path=rules_path or DEFAULT_RULES_PATH, allowlist_path=allowlist_path
        )


def _log_resource_stats(name: str, count: int, last_offset: Optional[Any], batches: Optional[int] = None) -> None:
    LOGGER.info(
        "Resource %s loaded %s rows%s%s",
        name,
        count,
        f" from {batches} frame(s)" if batches is not None else "",
        f" (last_offset={last_offset})" if last_offset is not None else "",
    )


__all__ = [
    "ALL_RESOURCE_NAMES",
    "SignatureScan",
    "affected_files",
    "heuristic_findings",
    "input_events",
    "keylog_guard_source",
    "scan_errors",
    "unreadable_entries",
]
