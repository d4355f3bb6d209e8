import threading

import pytest

from keylog_guard.monitor.hill import dump_key, generate_key
from keylog_guard.monitor.transport import ServerConfig, start_server


@pytest.fixture(autouse=True)
def isolated_dlt(tmp_path_factory, monkeypatch):
    # Each test uses an isolated .dlt folder outside tmp_path, which scans walk.
    dlt_dir = tmp_path_factory.mktemp("dlt")
    monkeypatch.setenv("DLT_DATA_DIR", str(dlt_dir))
    monkeypatch.setenv("DESTINATION__DUCKDB__CREDENTIALS", str(dlt_dir / "test.duckdb"))


@pytest.fixture
def byte_key():
    return generate_key(2, 256, seed=1234)


@pytest.fixture
def key_file(tmp_path, byte_key):
    path = tmp_path / "shared.key"
    path.write_text(dump_key(byte_key), encoding="utf-8")
    return path


@pytest.fixture
def log_server(tmp_path):
    """A LogServer on an ephemeral loopback port, served from a background thread."""
    notices = []
    config = ServerConfig(bind_address="127.0.0.1:0", log_path=tmp_path / "server.klf", idle_timeout=5.0)
    server = start_server(config, renderer=notices.append)
    server.notices = notices
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
