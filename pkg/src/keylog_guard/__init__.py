"""keylog-guard - a monitoring pipeline and the anti-keylogger that watches for it.

The package has two halves that are tested against each other:
- monitor: replayable input events, Hill cipher, encrypted client/server log shipment
- detector: signature database scanner and heuristic token scanner

Example:
    >>> from keylog_guard import generate_synthetic, generate_key, encrypt, decrypt, serialize_events
    >>> script = generate_synthetic(seed=42, count=5)
    >>> key = generate_key(n=2, m=256, seed=7)
    >>> payload = serialize_events(script)
    >>> decrypt(encrypt(payload, key), key) == payload
    True
"""

from keylog_guard.detector import heuristic_scan, load_rules, load_signatures, scan, write_reports
from keylog_guard.monitor import (
    decrypt,
    encrypt,
    generate_synthetic,
    make_key,
    parse_event_script,
    read_log,
    send_log,
    serialize_events,
)
from keylog_guard.monitor.hill import generate_key

__version__ = "0.1.0"
__all__ = [
    "decrypt",
    "encrypt",
    "generate_key",
    "generate_synthetic",
    "heuristic_scan",
    "load_rules",
    "load_signatures",
    "make_key",
    "parse_event_script",
    "read_log",
    "scan",
    "send_log",
    "serialize_events",
    "write_reports",
]
