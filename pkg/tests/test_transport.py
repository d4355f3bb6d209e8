import socket
import threading
import time

import pytest

from keylog_guard.common.errors import (
    ContentError,
    DeliveryError,
    FrameFormatError,
    FrameTooLargeError,
    FrameTruncatedError,
    FrameVersionError,
    LogFormatError,
    ServerStartupError,
    TransportError,
    UsageError,
)
from keylog_guard.monitor.events import EventScript, generate_synthetic, parse_event_script, serialize_events
from keylog_guard.monitor.hill import encrypt, generate_key
from keylog_guard.monitor.transport import (
    ACK,
    FRAME_HEADER_SIZE,
    NACK,
    LogShipper,
    ServerConfig,
    frame_decode,
    frame_encode,
    iter_log_batches,
    iter_log_frames,
    read_log,
    resolve_server_config,
    send_log,
    start_server,
)


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


def test_empty_blob_frame_is_header_plus_blob_header(byte_key):
    frame = frame_encode(encrypt(b"", byte_key))

    assert len(frame) == 23
    assert frame[:4] == b"KLF1"
    assert frame[4] == 1


def test_frame_decode_reports_consumed_bytes(byte_key):
    first = frame_encode(encrypt(b"0 key_press a\n", byte_key))
    second = frame_encode(encrypt(b"5 key_press b\n", byte_key))

    blob, consumed = frame_decode(first + second)

    assert consumed == len(first)
    assert blob.original_len == 14


def test_frame_decode_rejects_bad_input(byte_key):
    frame = frame_encode(encrypt(b"hello", byte_key))

    with pytest.raises(FrameFormatError):
        frame_decode(b"XXXX" + frame[4:])
    with pytest.raises(FrameVersionError):
        frame_decode(frame[:4] + b"\x02" + frame[5:])
    with pytest.raises(FrameTruncatedError):
        frame_decode(frame[:-1])
    with pytest.raises(FrameTruncatedError):
        frame_decode(frame[:6])
    with pytest.raises(FrameTooLargeError):
        frame_decode(frame, max_frame_bytes=10)


def test_frame_encode_enforces_limit(byte_key):
    with pytest.raises(FrameTooLargeError):
        frame_encode(encrypt(b"x" * 200, byte_key), max_frame_bytes=64)


def test_iter_log_frames_points_at_corruption(byte_key):
    frame = frame_encode(encrypt(b"0 key_press a\n", byte_key))
    data = frame + frame + b"junk"

    offsets = []
    with pytest.raises(LogFormatError) as excinfo:
        for offset, end, _ in iter_log_frames(data):
            offsets.append((offset, end))

    assert offsets == [(0, len(frame)), (len(frame), 2 * len(frame))]
    assert excinfo.value.offset == 2 * len(frame)


def test_build_frames_batches_events(byte_key):
    script = generate_synthetic(seed=3, count=5)
    shipper = LogShipper("127.0.0.1:9", byte_key, batch_size=2)

    frames = shipper.build_frames(script)

    assert len(frames) == 3


def test_server_accepts_three_frames_and_acks_each(log_server, byte_key):
    script = generate_synthetic(seed=1, count=6)

    sent = send_log(log_server.address, script, byte_key, batch_size=2, timeout=5)

    assert sent == 3
    assert wait_for(lambda: len(log_server.notices) == 3)
    assert [notice.sequence for notice in log_server.notices] == [1, 2, 3]
    assert log_server.notices[0].events is None
    frames = list(iter_log_frames(log_server.config.log_path.read_bytes()))
    assert len(frames) == 3


def test_end_to_end_hundred_events_round_trip(log_server, byte_key):
    script = generate_synthetic(seed=42, count=100)

    send_log(log_server.address, script, byte_key, batch_size=7, timeout=5)

    recovered = read_log(log_server.config.log_path, byte_key)
    assert serialize_events(recovered) == serialize_events(script)


def test_read_log_with_wrong_key_is_a_content_error(log_server, byte_key):
    send_log(log_server.address, generate_synthetic(seed=5, count=20), byte_key, batch_size=5, timeout=5)

    with pytest.raises(ContentError):
        read_log(log_server.config.log_path, generate_key(2, 256, seed=999))


def test_concurrent_clients_never_interleave_frames(log_server, byte_key):
    scripts = [generate_synthetic(seed=seed, count=10) for seed in (10, 20)]
    errors = []

    def ship(script):
        try:
            send_log(log_server.address, script, byte_key, batch_size=1, timeout=5)
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=ship, args=(script,)) for script in scripts]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(timeout=10)

    assert errors == []
    batches = list(iter_log_batches(log_server.config.log_path, byte_key))
    assert len(batches) == 20
    received = sorted(batch.script.events[0].to_line() for batch in batches)
    expected = sorted(event.to_line() for script in scripts for event in script.events)
    assert received == expected


def test_garbage_client_gets_nack_and_server_keeps_serving(log_server, byte_key):
    host, port = log_server.address.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=5) as sock:
        sock.sendall(b"XXXX" + b"\x00" * 20)
        assert sock.recv(1) == NACK

    sent = send_log(log_server.address, generate_synthetic(seed=2, count=3), byte_key, timeout=5)

    assert sent == 1
    assert len(list(iter_log_frames(log_server.config.log_path.read_bytes()))) == 1


def test_oversized_frame_is_rejected(tmp_path, byte_key):
    config = ServerConfig(bind_address="127.0.0.1:0", log_path=tmp_path / "small.klf", max_frame_bytes=64)
    server = start_server(config)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        shipper = LogShipper(server.address, byte_key, batch_size=50, timeout=5)
        with pytest.raises(DeliveryError) as excinfo:
            shipper.send(generate_synthetic(seed=8, count=50))
        assert excinfo.value.acked == 0
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
    assert config.log_path.read_bytes() == b""


def test_server_renders_events_when_given_a_key(tmp_path, byte_key):
    notices = []
    config = ServerConfig(bind_address="127.0.0.1:0", log_path=tmp_path / "render.klf", render_key=byte_key)
    server = start_server(config, renderer=notices.append)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        send_log(server.address, generate_synthetic(seed=4, count=4), byte_key, timeout=5)
        assert wait_for(lambda: len(notices) == 1)
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
    assert len(notices[0].events) == 4


def test_send_to_closed_port_is_a_transport_error(byte_key, monkeypatch):
    with socket.socket() as spare:
        spare.bind(("127.0.0.1", 0))
        port = spare.getsockname()[1]
    monkeypatch.setattr("keylog_guard.monitor.transport.time.sleep", lambda _: None)

    with pytest.raises(TransportError):
        send_log(f"127.0.0.1:{port}", generate_synthetic(seed=1, count=2), byte_key, timeout=1, max_retries=2)


def test_connect_retries_with_backoff(byte_key, monkeypatch, caplog):
    attempts = []
    delays = []

    def fake_connect(endpoint, timeout):
        attempts.append(endpoint)
        raise ConnectionRefusedError("refused")

    monkeypatch.setattr("keylog_guard.monitor.transport.socket.create_connection", fake_connect)
    monkeypatch.setattr("keylog_guard.monitor.transport.time.sleep", delays.append)
    shipper = LogShipper("127.0.0.1:5050", byte_key, max_retries=2, initial_delay=0.1, jitter_ratio=0.0)

    with caplog.at_level("WARNING"), pytest.raises(TransportError):
        shipper.send(EventScript())

    assert len(attempts) == 3
    assert delays == pytest.approx([0.1, 0.2])
    assert "Retrying connection" in caplog.text


def test_multi_session_log_reads_per_batch(log_server, byte_key):
    first = generate_synthetic(seed=1, count=3)
    second = parse_event_script("0 key_press z\n")

    send_log(log_server.address, first, byte_key, timeout=5)
    send_log(log_server.address, second, byte_key, timeout=5)

    batches = list(iter_log_batches(log_server.config.log_path, byte_key))
    assert [len(batch.script) for batch in batches] == [3, 1]
    assert batches[1].offset == batches[0].end_offset
    with pytest.raises(ContentError):
        read_log(log_server.config.log_path, byte_key)


def test_start_server_fails_on_unwritable_log(tmp_path):
    config = ServerConfig(bind_address="127.0.0.1:0", log_path=tmp_path / "missing" / "log.klf")

    with pytest.raises(ServerStartupError):
        start_server(config)


def test_server_config_validation():
    with pytest.raises(UsageError):
        ServerConfig(bind_address="nohostport")
    with pytest.raises(UsageError):
        ServerConfig(max_frame_bytes=10)


def test_resolve_server_config_reads_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("KEYLOG_GUARD__SERVER__BIND_ADDRESS", "127.0.0.1:6060")
    monkeypatch.setenv("KEYLOG_GUARD__SERVER__MAX_FRAME_BYTES", "4096")

    config = resolve_server_config(log_path=tmp_path / "x.klf")

    assert config.bind_address == "127.0.0.1:6060"
    assert config.max_frame_bytes == 4096
    assert config.log_path == tmp_path / "x.klf"
    assert resolve_server_config(bind_address="127.0.0.1:7070").bind_address == "127.0.0.1:7070"


def test_ack_bytes_are_distinct():
    assert ACK != NACK
    assert FRAME_HEADER_SIZE == 9
