"""Heuristic token scanner.

Files are scored by the weights of the suspicious tokens they contain, each
rule counting at most once per file. Anything at or above the threshold is
flagged unless the user allowlisted its exact path. Legitimate software that
merely mentions a hooking API gets flagged too; the allowlist is the remedy.
"""
from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from keylog_guard.common.errors import AllowlistError, RuleParseError, UsageError
from keylog_guard.common.walk import describe_os_error, walk_files

from .signatures import ScanErrorEntry, write_text_report

CHUNK_SIZE = 1 << 20
HEURISTIC_FILE = "heuristic.txt"
DEFAULT_RULES_PATH = Path(__file__).with_name("data") / "default_rules.tsv"

_TOKEN_ESCAPE = re.compile(rb"\\(?:x([0-9A-Fa-f]{2})|(\\))")

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Rule:
    token: bytes
    weight: int
    description: str = ""


@dataclass(frozen=True, slots=True)
class RuleSet:
    rules: tuple[Rule, ...]
    threshold: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))
        tokens = [rule.token for rule in self.rules]
        if len(set(tokens)) != len(tokens):
            raise RuleParseError("rule tokens must be unique")
        if any(not rule.token for rule in self.rules):
            raise RuleParseError("rule tokens must be non-empty")
        if any(rule.weight <= 0 for rule in self.rules):
            raise RuleParseError("rule weights must be positive")
        if self.threshold <= 0:
            raise RuleParseError("threshold must be positive")
        if self.threshold > self.total_weight:
            raise RuleParseError(
                f"threshold {self.threshold} exceeds the total rule weight {self.total_weight}; nothing could be flagged"
            )

    @property
    def total_weight(self) -> int:
        return sum(rule.weight for rule in self.rules)

    @property
    def longest_token(self) -> int:
        return max((len(rule.token) for rule in self.rules), default=0)


def normalize_path(path: Union[str, Path]) -> str:
    return os.path.normpath(os.path.abspath(os.fspath(path)))


@dataclass(frozen=True, slots=True)
class Allowlist:
    paths: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "paths", frozenset(normalize_path(path) for path in self.paths))

    def __contains__(self, path: object) -> bool:
        if not isinstance(path, (str, Path)):
            return False
        return normalize_path(path) in self.paths

    def __len__(self) -> int:
        return len(self.paths)


def _decode_token(text: str, line_number: int) -> bytes:
    """UTF-8 bytes of ``text`` with ``\\xNN`` and ``\\\\`` escapes expanded."""
    raw = text.encode("utf-8")
    if b"\\" not in raw:
        return raw
    if _TOKEN_ESCAPE.sub(b"", raw).count(b"\\"):
        raise RuleParseError(f"bad escape in token {text!r}; use \\xNN or \\\\", line=line_number)
    return _TOKEN_ESCAPE.sub(lambda match: bytes.fromhex(match[1].decode()) if match[1] else b"\\", raw)


def token_label(token: bytes) -> str:
    """Token as a rule file writes it: ``\\xNN`` for unprintable bytes, ``\\\\`` for a backslash."""
    parts: list[str] = []
    for char in token.decode("utf-8", errors="surrogateescape"):
        if char == "\\":
            parts.append("\\\\")
        elif char.isprintable():
            parts.append(char)
        else:
            parts.extend(f"\\x{byte:02x}" for byte in char.encode("utf-8", errors="surrogateescape"))
    return "".join(parts)


def parse_rules(lines: Iterable[str]) -> RuleSet:
    rules: list[Rule] = []
    first_seen: dict[bytes, int] = {}
    threshold: Optional[int] = None
    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line.startswith("threshold"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) <= 0:
                raise RuleParseError("threshold line must be 'threshold <positive integer>'", line=line_number)
            if threshold is not None:
                raise RuleParseError("threshold given twice", line=line_number)
            threshold = int(parts[1])
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise RuleParseError("rule lines must be '<weight>\\t<token>\\t<description>'", line=line_number)
        weight_text, token_text = fields[0].strip(), fields[1]
        if not weight_text.isdigit() or int(weight_text) <= 0:
            raise RuleParseError(f"weight must be a positive integer, got {fields[0]!r}", line=line_number)
        if not token_text:
            raise RuleParseError("token must not be empty", line=line_number)
        token = _decode_token(token_text, line_number)
        if token in first_seen:
            raise RuleParseError(
                f"duplicate token {token_text!r} (first defined on line {first_seen[token]})", line=line_number
            )
        first_seen[token] = line_number
        description = fields[2].strip() if len(fields) == 3 else ""
        rules.append(Rule(token, int(weight_text), description))
    if threshold is None:
        raise RuleParseError("missing 'threshold <N>' line")
    return RuleSet(tuple(rules), threshold)


def load_rules(path: Union[str, Path] = DEFAULT_RULES_PATH) -> RuleSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise RuleParseError(f"rule file {path} is not UTF-8 text: {exc}") from exc
    rule_set = parse_rules(text.splitlines())
    LOGGER.info("Loaded %s heuristic rule(s) from %s (threshold %s)", len(rule_set.rules), path, rule_set.threshold)
    return rule_set


def load_allowlist(path: Union[str, Path]) -> Allowlist:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise AllowlistError(f"allowlist {path} is not UTF-8 text: {exc}") from exc
    entries = [line.strip() for line in lines if line.strip() and not line.strip().startswith("#")]
    return Allowlist(frozenset(entries))


@dataclass(frozen=True, slots=True)
class Finding:
    path: str
    score: int
    tokens: tuple[str, ...]


@dataclass(slots=True)
class HeuristicReport:
    root: str
    findings: list[Finding]
    scanned_count: int
    error_entries: list[ScanErrorEntry] = field(default_factory=list)
    allowlisted: int = 0
    started: Optional[datetime] = None
    finished: Optional[datetime] = None


def matched_rules(path: Union[str, Path], rules: Sequence[Rule], overlap: int) -> list[Rule]:
    """Rules whose token occurs in the file, searching chunk by chunk."""
    pending = list(rules)
    found: list[Rule] = []
    tail = b""
    with open(path, "rb") as handle:
        while pending:
            chunk = handle.read(CHUNK_SIZE)
            if not chunk:
                break
            window = tail + chunk
            still_pending = []
            for rule in pending:
                (found if rule.token in window else still_pending).append(rule)
            pending = still_pending
            tail = window[-overlap:] if overlap else b""
    return found


def score_file(path: Union[str, Path], rule_set: RuleSet) -> tuple[int, tuple[str, ...]]:
    found = matched_rules(path, rule_set.rules, max(rule_set.longest_token - 1, 0))
    found.sort(key=lambda rule: rule.token)
    score = sum(rule.weight for rule in found)
    return score, tuple(token_label(rule.token) for rule in found)


def heuristic_scan(
    root: Union[str, Path],
    rules: RuleSet,
    allowlist: Allowlist = Allowlist(),
    workers: int = 1,
) -> HeuristicReport:
    if workers <= 0:
        raise UsageError("workers must be positive")
    started = datetime.now(UTC)
    files: list[str] = []
    error_entries: list[ScanErrorEntry] = []
    for entry in walk_files(root):
        if entry.is_file:
            files.append(entry.path)
        else:
            error_entries.append(ScanErrorEntry(entry.path, entry.reason))

    def evaluate(path: str) -> tuple[str, Optional[tuple[int, tuple[str, ...]]], Optional[str]]:
        try:
            return path, score_file(path, rules), None
        except OSError as exc:
            return path, None, describe_os_error(exc)

    if workers > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, files))
    else:
        results = [evaluate(path) for path in files]

    findings: list[Finding] = []
    scanned = 0
    allowlisted = 0
    for path, outcome, reason in results:
        if outcome is None:
            LOGGER.warning("Cannot read %s: %s", path, reason)
            error_entries.append(ScanErrorEntry(path, reason or "unreadable"))
            continue
        scanned += 1
        score, tokens = outcome
        if score < rules.threshold:
            continue
        if path in allowlist:
            allowlisted += 1
            LOGGER.info("Allowlisted %s (score %s) not flagged", path, score)
            continue
        findings.append(Finding(path, score, tokens))

    findings.sort(key=lambda item: (-item.score, item.path))
    error_entries.sort(key=lambda item: item.path)
    LOGGER.info(
        "Heuristic scan of %s: %s file(s), %s finding(s), %s allowlisted, %s error(s)",
        root,
        scanned,
        len(findings),
        allowlisted,
        len(error_entries),
    )
    return HeuristicReport(
        root=str(root),
        findings=findings,
        scanned_count=scanned,
        error_entries=error_entries,
        allowlisted=allowlisted,
        started=started,
        finished=datetime.now(UTC),
    )


def format_findings(report: HeuristicReport) -> str:
    return "".join(f"{item.path}\t{item.score}\t{','.join(item.tokens)}\n" for item in report.findings)


def write_heuristic_report(report: HeuristicReport, out_dir: Union[str, Path]) -> Path:
    return write_text_report(Path(out_dir) / HEURISTIC_FILE, format_findings(report))


__all__ = [
    "DEFAULT_RULES_PATH",
    "HEURISTIC_FILE",
    "Allowlist",
    "Finding",
    "HeuristicReport",
    "Rule",
    "RuleSet",
    "heuristic_scan",
    "load_allowlist",
    "load_rules",
    "parse_rules",
    "score_file",
    "token_label",
    "write_heuristic_report",
]
