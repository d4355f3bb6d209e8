"""Configuration lookups backed by dlt's config providers.

Values are read from environment variables (``KEYLOG_GUARD__SERVER__BIND_ADDRESS``)
or ``.dlt/config.toml`` (``[keylog_guard.server] bind_address = ...``). Explicit
arguments always win over configured values, which win over the defaults below.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Optional, Type, TypeVar

import dlt

from .errors import UsageError

CONFIG_SECTION = "keylog_guard"

DEFAULT_PORT = 5050
DEFAULT_BIND_ADDRESS = f"localhost:{DEFAULT_PORT}"
DEFAULT_LOG_PATH = "keylog.klf"
DEFAULT_MAX_FRAME_BYTES = 1 << 20
MIN_FRAME_BYTES = 64
DEFAULT_IDLE_TIMEOUT = 30.0
DEFAULT_SEND_TIMEOUT = 10.0
DEFAULT_BATCH_SIZE = 50
DEFAULT_HEADER_LEN = 1024
DEFAULT_WORKERS = 1

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


def config_value(key: str, expected_type: Type[T], default: T, explicit: Optional[T] = None) -> T:
    """Return ``explicit`` if given, else the configured ``keylog_guard.<key>``, else ``default``."""
    if explicit is not None:
        return explicit
    try:
        configured: Any = dlt.config.get(f"{CONFIG_SECTION}.{key}", expected_type)
    except Exception as exc:  # dlt raises coercion errors for malformed values
        raise UsageError(f"invalid configuration value for {CONFIG_SECTION}.{key}: {exc}") from exc
    if configured is None:
        return default
    LOGGER.debug("Using configured %s.%s=%r", CONFIG_SECTION, key, configured)
    return configured


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port`` (IPv6 hosts in brackets) into a socket address tuple."""
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise UsageError(f"address must look like host:port, got {address!r}")
    port_number = int(port)
    if port_number > 65535:
        raise UsageError(f"port out of range in {address!r}")
    return host.strip("[]"), port_number


@dataclass(frozen=True, slots=True)
class ClientSettings:
    timeout: float = DEFAULT_SEND_TIMEOUT
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise UsageError("client timeout must be positive")
        if self.batch_size <= 0:
            raise UsageError("batch size must be positive")


@dataclass(frozen=True, slots=True)
class ScanSettings:
    header_len: int = DEFAULT_HEADER_LEN
    workers: int = DEFAULT_WORKERS

    def __post_init__(self) -> None:
        if self.header_len <= 0:
            raise UsageError("header length must be positive")
        if self.workers <= 0:
            raise UsageError("workers must be positive")


def resolve_client_settings(timeout: Optional[float] = None, batch_size: Optional[int] = None) -> ClientSettings:
    return ClientSettings(
        timeout=config_value("client.timeout", float, DEFAULT_SEND_TIMEOUT, timeout),
        batch_size=config_value("client.batch_size", int, DEFAULT_BATCH_SIZE, batch_size),
    )


def resolve_scan_settings(header_len: Optional[int] = None, workers: Optional[int] = None) -> ScanSettings:
    return ScanSettings(
        header_len=config_value("scan.header_len", int, DEFAULT_HEADER_LEN, header_len),
        workers=config_value("scan.workers", int, DEFAULT_WORKERS, workers),
    )


__all__ = [
    "CONFIG_SECTION",
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_BIND_ADDRESS",
    "DEFAULT_HEADER_LEN",
    "DEFAULT_IDLE_TIMEOUT",
    "DEFAULT_LOG_PATH",
    "DEFAULT_MAX_FRAME_BYTES",
    "DEFAULT_PORT",
    "DEFAULT_SEND_TIMEOUT",
    "MIN_FRAME_BYTES",
    "ClientSettings",
    "ScanSettings",
    "config_value",
    "parse_address",
    "resolve_client_settings",
    "resolve_scan_settings",
]
