"""Monitoring pipeline: input events, Hill cipher, and encrypted log shipment."""
from .events import (
    EventKind,
    EventScript,
    InputEvent,
    MouseButton,
    capture_interactive,
    generate_synthetic,
    load_event_script,
    parse_event_script,
    serialize_events,
)
from .hill import CipherBlob, HillKey, decrypt, encrypt, invert_key, load_key, make_key, mod_inverse
from .transport import (
    LogServer,
    LogShipper,
    ServerConfig,
    frame_decode,
    frame_encode,
    read_log,
    resolve_server_config,
    run_server,
    send_log,
    start_server,
)

__all__ = [
    "CipherBlob",
    "EventKind",
    "EventScript",
    "HillKey",
    "InputEvent",
    "LogServer",
    "LogShipper",
    "MouseButton",
    "ServerConfig",
    "capture_interactive",
    "decrypt",
    "encrypt",
    "frame_decode",
    "frame_encode",
    "generate_synthetic",
    "invert_key",
    "load_event_script",
    "load_key",
    "make_key",
    "mod_inverse",
    "parse_event_script",
    "read_log",
    "resolve_server_config",
    "run_server",
    "send_log",
    "serialize_events",
    "start_server",
]
