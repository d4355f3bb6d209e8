"""Client to server shipment of encrypted event batches.

Wire and storage format are the same: concatenated frames of
``b"KLF1" | version (1 byte) | payload_len (4 bytes, big-endian) | payload``
where the payload is a serialized :class:`~keylog_guard.monitor.hill.CipherBlob`.
The server answers every accepted frame with ``0x06`` and a rejected one with
``0x15`` before dropping that connection.
"""
from __future__ import annotations

import logging
import random
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

from keylog_guard.common.config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BIND_ADDRESS,
    DEFAULT_IDLE_TIMEOUT,
    DEFAULT_LOG_PATH,
    DEFAULT_MAX_FRAME_BYTES,
    DEFAULT_SEND_TIMEOUT,
    MIN_FRAME_BYTES,
    config_value,
    parse_address,
)
from keylog_guard.common.errors import (
    BlobFormatError,
    ContentError,
    DeliveryError,
    FrameError,
    FrameFormatError,
    FrameTooLargeError,
    FrameTruncatedError,
    FrameVersionError,
    KeylogGuardError,
    LogFormatError,
    ScriptParseError,
    ServerStartupError,
    TransportError,
    UsageError,
)

from .events import EventScript, parse_event_script, serialize_events
from .hill import CipherBlob, HillKey, blob_from_bytes, blob_to_bytes, decrypt, encrypt

FRAME_MAGIC = b"KLF1"
FRAME_VERSION = 1
_FRAME_HEADER = struct.Struct(">4sBI")
FRAME_HEADER_SIZE = _FRAME_HEADER.size
MAX_PAYLOAD_FIELD = 0xFFFFFFFF

ACK = b"\x06"
NACK = b"\x15"

_DRAIN_TIMEOUT = 0.5
_DRAIN_LIMIT = 1 << 20

LOGGER = logging.getLogger(__name__)


def frame_encode(blob: CipherBlob, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> bytes:
    payload = blob_to_bytes(blob)
    if len(payload) > min(max_frame_bytes, MAX_PAYLOAD_FIELD):
        raise FrameTooLargeError(f"payload of {len(payload)} bytes exceeds the {max_frame_bytes} byte limit")
    return _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, len(payload)) + payload


def _parse_header(header: bytes, max_frame_bytes: Optional[int]) -> int:
    magic, version, payload_len = _FRAME_HEADER.unpack_from(header)
    if magic != FRAME_MAGIC:
        raise FrameFormatError(f"bad frame magic {bytes(magic)!r}")
    if version != FRAME_VERSION:
        raise FrameVersionError(f"unsupported frame version {version}")
    if max_frame_bytes is not None and payload_len > max_frame_bytes:
        raise FrameTooLargeError(f"frame payload of {payload_len} bytes exceeds the {max_frame_bytes} byte limit")
    return payload_len


def _check_magic_prefix(prefix: bytes) -> None:
    if prefix != FRAME_MAGIC[: len(prefix)]:
        raise FrameFormatError(f"bad frame magic {prefix!r}")


def frame_decode(data: Union[bytes, memoryview], max_frame_bytes: Optional[int] = None) -> tuple[CipherBlob, int]:
    """Decode the first frame of ``data``; return the blob and the bytes it consumed."""
    view = memoryview(data)
    _check_magic_prefix(bytes(view[: len(FRAME_MAGIC)]))
    if len(view) < FRAME_HEADER_SIZE:
        raise FrameTruncatedError(f"frame header needs {FRAME_HEADER_SIZE} bytes, got {len(view)}")
    payload_len = _parse_header(view, max_frame_bytes)
    end = FRAME_HEADER_SIZE + payload_len
    if len(view) < end:
        raise FrameTruncatedError(f"frame declares {payload_len} payload bytes, only {len(view) - FRAME_HEADER_SIZE} present")
    try:
        blob = blob_from_bytes(bytes(view[FRAME_HEADER_SIZE:end]))
    except BlobFormatError as exc:
        raise FrameFormatError(f"frame payload is not a cipher blob: {exc}") from exc
    return blob, end


def iter_log_frames(data: bytes, start_offset: int = 0) -> Iterator[tuple[int, int, CipherBlob]]:
    """Yield ``(offset, end_offset, blob)`` for each frame from ``start_offset`` on."""
    view = memoryview(data)
    offset = start_offset
    while offset < len(view):
        try:
            blob, consumed = frame_decode(view[offset:])
        except FrameError as exc:
            raise LogFormatError(str(exc), offset=offset) from exc
        yield offset, offset + consumed, blob
        offset += consumed


@dataclass(frozen=True, slots=True)
class LogBatch:
    offset: int
    end_offset: int
    script: EventScript


def _decrypt_text(blob: CipherBlob, key: HillKey, offset: int) -> str:
    plain = decrypt(blob, key)
    try:
        return plain.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ContentError(f"frame at byte offset {offset} did not decrypt to UTF-8 text (wrong key?)") from exc


def iter_log_batches(
    log_path: Union[str, Path], key: HillKey, start_offset: int = 0
) -> Iterator[LogBatch]:
    """Decrypt and parse a log one frame at a time.

    Each batch parses on its own, so logs holding several client sessions
    (whose timestamps restart) stay readable.
    """
    data = Path(log_path).read_bytes()
    for offset, end, blob in iter_log_frames(data, start_offset):
        text = _decrypt_text(blob, key, offset)
        try:
            script = parse_event_script(text, source_label=f"{log_path}@{offset}")
        except ScriptParseError as exc:
            raise ContentError(f"frame at byte offset {offset} holds no valid events (wrong key?): {exc}") from exc
        yield LogBatch(offset, end, script)


def read_log(log_path: Union[str, Path], key: HillKey) -> EventScript:
    data = Path(log_path).read_bytes()
    texts = [_decrypt_text(blob, key, offset) for offset, _, blob in iter_log_frames(data)]
    try:
        script = parse_event_script("".join(texts), source_label=str(log_path))
    except ScriptParseError as exc:
        raise ContentError(f"decrypted log is not a valid event script (wrong key?): {exc}") from exc
    LOGGER.info("Read %s event(s) from %s frame(s) in %s", len(script), len(texts), log_path)
    return script


@dataclass(frozen=True, slots=True)
class ServerConfig:
    bind_address: str = DEFAULT_BIND_ADDRESS
    log_path: Path = Path(DEFAULT_LOG_PATH)
    max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT
    render_key: Optional[HillKey] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "log_path", Path(self.log_path))
        parse_address(self.bind_address)
        if self.max_frame_bytes < MIN_FRAME_BYTES:
            raise UsageError(f"max_frame_bytes must be at least {MIN_FRAME_BYTES}, got {self.max_frame_bytes}")
        if self.idle_timeout <= 0:
            raise UsageError("idle_timeout must be positive")


def resolve_server_config(
    bind_address: Optional[str] = None,
    log_path: Optional[Union[str, Path]] = None,
    max_frame_bytes: Optional[int] = None,
    idle_timeout: Optional[float] = None,
    render_key: Optional[HillKey] = None,
) -> ServerConfig:
    """Build a ServerConfig from explicit values, then ``keylog_guard.server.*`` config, then defaults."""
    return ServerConfig(
        bind_address=config_value("server.bind_address", str, DEFAULT_BIND_ADDRESS, bind_address),
        log_path=Path(config_value("server.log_path", str, DEFAULT_LOG_PATH, None if log_path is None else str(log_path))),
        max_frame_bytes=config_value("server.max_frame_bytes", int, DEFAULT_MAX_FRAME_BYTES, max_frame_bytes),
        idle_timeout=config_value("server.idle_timeout", float, DEFAULT_IDLE_TIMEOUT, idle_timeout),
        render_key=render_key,
    )


@dataclass(frozen=True, slots=True)
class BatchNotice:
    """What the server tells its operator about one accepted frame."""

    peer: str
    sequence: int
    payload_bytes: int
    original_len: int
    events: Optional[EventScript] = None


BatchRenderer = Callable[[BatchNotice], None]


def log_batch(notice: BatchNotice) -> None:
    if notice.events is not None:
        LOGGER.info("Batch %s from %s: %s event(s)", notice.sequence, notice.peer, len(notice.events))
    else:
        LOGGER.info(
            "Batch %s from %s: %s encrypted byte(s)", notice.sequence, notice.peer, notice.original_len
        )


class LogServer(socketserver.ThreadingTCPServer):
    """Threaded frame receiver with a single serialized appender."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: ServerConfig, renderer: Optional[BatchRenderer] = None) -> None:
        self.config = config
        self.renderer = renderer or log_batch
        self._append_lock = threading.Lock()
        self._sequence = 0
        super().__init__(parse_address(config.bind_address), FrameRequestHandler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def append_frame(self, frame: bytes) -> int:
        # whole frames only, one writer at a time
        with self._append_lock:
            with open(self.config.log_path, "ab") as handle:
                handle.write(frame)
                handle.flush()
            self._sequence += 1
            return self._sequence

    def render(self, peer: str, sequence: int, frame: bytes, blob: CipherBlob) -> None:
        events: Optional[EventScript] = None
        if self.config.render_key is not None:
            try:
                events = parse_event_script(_decrypt_text(blob, self.config.render_key, 0))
            except KeylogGuardError as exc:
                LOGGER.warning("Cannot render batch %s from %s: %s", sequence, peer, exc)
        notice = BatchNotice(peer, sequence, len(frame) - FRAME_HEADER_SIZE, blob.original_len, events)
        try:
            self.renderer(notice)
        except Exception:
            LOGGER.exception("Batch renderer failed for batch %s", sequence)


class FrameRequestHandler(socketserver.StreamRequestHandler):
    server: LogServer

    def setup(self) -> None:
        self.timeout = self.server.config.idle_timeout
        super().setup()

    def handle(self) -> None:
        peer = "%s:%s" % self.client_address[:2]
        accepted = 0
        while True:
            try:
                read = self._read_frame()
            except FrameError as exc:
                LOGGER.warning("Protocol error from %s after %s frame(s): %s", peer, accepted, exc)
                self._reject()
                break
            except OSError as exc:
                LOGGER.warning("Connection from %s failed after %s frame(s): %s", peer, accepted, exc)
                break
            if read is None:
                break
            frame, blob = read
            sequence = self.server.append_frame(frame)
            accepted += 1
            try:
                self.wfile.write(ACK)
            except OSError as exc:
                LOGGER.warning("Could not ack frame %s to %s: %s", sequence, peer, exc)
                break
            LOGGER.debug("Accepted frame %s (%s bytes) from %s", sequence, len(frame), peer)
            self.server.render(peer, sequence, frame, blob)
        LOGGER.info("Connection from %s closed; %s frame(s) accepted", peer, accepted)

    def _read_exact(self, size: int) -> bytes:
        data = self.rfile.read(size)
        if len(data) != size:
            raise FrameTruncatedError(f"connection closed mid-frame ({len(data)} of {size} bytes)")
        return data

    def _read_frame(self) -> Optional[tuple[bytes, CipherBlob]]:
        first = self.rfile.read(len(FRAME_MAGIC))
        if not first:
            return None
        _check_magic_prefix(first)
        if len(first) != len(FRAME_MAGIC):
            raise FrameTruncatedError("connection closed mid-header")
        header = first + self._read_exact(FRAME_HEADER_SIZE - len(FRAME_MAGIC))
        payload_len = _parse_header(header, self.server.config.max_frame_bytes)
        frame = header + self._read_exact(payload_len)
        blob, _ = frame_decode(frame)
        return frame, blob

    def _reject(self) -> None:
        try:
            self.wfile.write(NACK)
            self.wfile.flush()
            self.connection.shutdown(socket.SHUT_WR)
            # consume what the peer already sent so closing does not reset the nack
            self.connection.settimeout(_DRAIN_TIMEOUT)
            drained = 0
            while drained < _DRAIN_LIMIT:
                chunk = self.connection.recv(4096)
                if not chunk:
                    break
                drained += len(chunk)
        except OSError:
            pass


def start_server(config: ServerConfig, renderer: Optional[BatchRenderer] = None) -> LogServer:
    """Bind the server without serving; callers run ``serve_forever``."""
    try:
        with open(config.log_path, "ab"):
            pass
    except OSError as exc:
        raise ServerStartupError(f"log file {config.log_path} is not writable: {exc}") from exc
    try:
        server = LogServer(config, renderer)
    except OSError as exc:
        raise ServerStartupError(f"cannot bind {config.bind_address}: {exc}") from exc
    LOGGER.info("Listening on %s, appending frames to %s", server.address, config.log_path)
    return server


def run_server(config: ServerConfig, renderer: Optional[BatchRenderer] = None) -> None:
    """Serve until ``shutdown()`` is called or the process is interrupted."""
    server = start_server(config, renderer)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        LOGGER.info("Server on %s stopped", server.address)


@dataclass(slots=True)
class LogShipper:
    """Encrypts event batches and delivers them frame by frame, waiting for each ack."""

    address: str
    key: HillKey
    batch_size: int = DEFAULT_BATCH_SIZE
    timeout: float = DEFAULT_SEND_TIMEOUT
    max_retries: int = 0
    initial_delay: float = 0.5
    backoff_factor: float = 2.0
    jitter_ratio: float = 0.1
    max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES
    _endpoint: tuple[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.batch_size <= 0:
            raise UsageError("batch_size must be positive")
        self._endpoint = parse_address(self.address)

    def build_frames(self, script: EventScript) -> list[bytes]:
        frames = []
        for start in range(0, len(script.events), self.batch_size):
            batch = EventScript(script.events[start : start + self.batch_size], script.source_label)
            frames.append(frame_encode(encrypt(serialize_events(batch), self.key), self.max_frame_bytes))
        return frames

    def send(self, script: EventScript) -> int:
        frames = self.build_frames(script)
        acked = 0
        with self._connect() as sock:
            for frame in frames:
                try:
                    sock.sendall(frame)
                    reply = sock.recv(1)
                except socket.timeout:
                    raise DeliveryError(f"timed out after {self.timeout}s waiting for ack", acked=acked) from None
                except OSError as exc:
                    raise DeliveryError(f"connection to {self.address} lost: {exc}", acked=acked) from exc
                if reply == NACK:
                    raise DeliveryError(f"server {self.address} rejected frame {acked + 1}", acked=acked)
                if reply != ACK:
                    raise DeliveryError(f"server {self.address} closed before acknowledging", acked=acked)
                acked += 1
        LOGGER.info("Sent %s event(s) in %s frame(s) to %s", len(script), acked, self.address)
        return acked

    def _connect(self) -> socket.socket:
        last_error: Optional[OSError] = None
        for attempt in range(self.max_retries + 1):
            try:
                return socket.create_connection(self._endpoint, timeout=self.timeout)
            except OSError as exc:
                last_error = exc
                if attempt >= self.max_retries:
                    break
                delay = self._compute_delay(attempt)
                LOGGER.warning(
                    "Retrying connection to %s due to %s (attempt %s/%s, delay %.2fs)",
                    self.address,
                    exc,
                    attempt + 1,
                    self.max_retries,
                    delay,
                )
                time.sleep(delay)
        raise TransportError(f"cannot connect to {self.address}: {last_error}")

    def _compute_delay(self, attempt: int) -> float:
        base = self.initial_delay * (self.backoff_factor ** attempt)
        jitter = base * self.jitter_ratio * random.uniform(-1, 1)
        return max(0.0, base + jitter)


def send_log(
    address: str,
    script: EventScript,
    key: HillKey,
    batch_size: int = DEFAULT_BATCH_SIZE,
    *,
    timeout: float = DEFAULT_SEND_TIMEOUT,
    max_retries: int = 0,
) -> int:
    shipper = LogShipper(address, key, batch_size=batch_size, timeout=timeout, max_retries=max_retries)
    return shipper.send(script)


__all__ = [
    "ACK",
    "FRAME_HEADER_SIZE",
    "FRAME_MAGIC",
    "FRAME_VERSION",
    "NACK",
    "BatchNotice",
    "LogBatch",
    "LogServer",
    "LogShipper",
    "ServerConfig",
    "frame_decode",
    "frame_encode",
    "iter_log_batches",
    "iter_log_frames",
    "read_log",
    "resolve_server_config",
    "run_server",
    "send_log",
    "start_server",
]
