"""Anti-keylogger scanners: signature database matching and heuristic token scoring."""
from .heuristics import (
    DEFAULT_RULES_PATH,
    Allowlist,
    HeuristicReport,
    RuleSet,
    heuristic_scan,
    load_allowlist,
    load_rules,
    write_heuristic_report,
)
from .signatures import (
    DEMO_SIGNATURES_PATH,
    DigestParams,
    HashMode,
    ScanReport,
    SignatureDb,
    file_digest,
    load_signatures,
    scan,
    write_reports,
)

__all__ = [
    "DEFAULT_RULES_PATH",
    "DEMO_SIGNATURES_PATH",
    "Allowlist",
    "DigestParams",
    "HashMode",
    "HeuristicReport",
    "RuleSet",
    "ScanReport",
    "SignatureDb",
    "file_digest",
    "heuristic_scan",
    "load_allowlist",
    "load_rules",
    "load_signatures",
    "scan",
    "write_heuristic_report",
    "write_reports",
]
