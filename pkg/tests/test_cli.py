import io
from pathlib import Path

import pytest

from keylog_guard import cli
from keylog_guard.common.errors import ServerStartupError
from keylog_guard.monitor.events import generate_synthetic, load_event_script, serialize_events
from keylog_guard.monitor.hill import dump_key, make_key


FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.mark.parametrize(
    ("argv", "flags"),
    [
        (["capture"], ["--out"]),
        (["replay"], ["--script", "--out"]),
        (["serve"], ["--bind", "--log", "--key", "--max-frame-bytes"]),
        (["send"], ["--to", "--script", "--key", "--batch", "--timeout", "--retries"]),
        (["read-log"], ["--log", "--key", "--out"]),
        (["detect"], ["--root", "--signatures", "--mode", "--header-len", "--out", "--workers"]),
        (["heuristic"], ["--root", "--rules", "--allow", "--out", "--workers"]),
        (["hill", "encrypt"], ["--key", "--in", "--out"]),
        (["hill", "decrypt"], ["--key", "--in", "--out"]),
        (["hill", "keygen"], ["--size", "--modulus", "--seed", "--out"]),
    ],
)
def test_help_lists_every_flag(argv, flags, capsys):
    assert cli.main([*argv, "--help"]) == 0

    out = capsys.readouterr().out
    for flag in flags:
        assert flag in out


def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["bogus"]) == 1
    assert cli.main(["detect", "--root", "x"]) == 1
    assert cli.main(["send", "--to", "h:1", "--script", "s", "--key", "k", "--batch", "0"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_detect_exit_codes(tmp_path):
    root = tmp_path / "root"
    root.mkdir()
    (root / "clean.txt").write_text("hello", encoding="utf-8")
    out_dir = tmp_path / "out"
    signatures = FIXTURES_DIR / "signatures.txt"

    assert cli.main(["detect", "--root", str(root), "--signatures", str(signatures), "--out", str(out_dir)]) == 0
    assert (out_dir / "affected.txt").read_text() == ""

    (root / "sample.bin").write_bytes((FIXTURES_DIR / "demo_keylogger.bin").read_bytes())
    assert cli.main(["detect", "--root", str(root), "--signatures", str(signatures), "--out", str(out_dir)]) == 4
    assert "sample.bin" in (out_dir / "affected.txt").read_text()
    assert (out_dir / "result.txt").exists()
    assert (out_dir / "errors.txt").exists()


def test_detect_header_mode(tmp_path):
    root = tmp_path / "root"
    root.mkdir()
    (root / "prefixed.bin").write_bytes(b"abc" + b"trailing bytes")
    out_dir = tmp_path / "out"

    code = cli.main(
        [
            "detect",
            "--root", str(root),
            "--signatures", str(FIXTURES_DIR / "signatures.txt"),
            "--mode", "header",
            "--header-len", "3",
            "--out", str(out_dir),
        ]
    )

    assert code == 4
    assert "mode: header_prefix" in (out_dir / "result.txt").read_text()


def test_detect_missing_root_and_bad_database(tmp_path):
    bad_db = tmp_path / "bad.txt"
    bad_db.write_text("zz not hex\n", encoding="utf-8")
    root = tmp_path / "root"
    root.mkdir()

    missing = ["detect", "--root", str(tmp_path / "nope"), "--signatures", str(FIXTURES_DIR / "signatures.txt")]
    assert cli.main([*missing, "--out", str(tmp_path / "o1")]) == 1
    assert cli.main(["detect", "--root", str(root), "--signatures", str(bad_db), "--out", str(tmp_path / "o2")]) == 3
    assert cli.main(["detect", "--root", str(root), "--signatures", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o3")]) == 2


def test_non_utf8_input_files_exit_three(tmp_path, capsys):
    root = tmp_path / "root"
    root.mkdir()
    (root / "notes.txt").write_text("nothing", encoding="utf-8")
    garbage = tmp_path / "garbage.bin"
    garbage.write_bytes(b"\xff\xfe\xfa\n")
    plain = tmp_path / "plain.bin"
    plain.write_bytes(b"x")
    rules = str(FIXTURES_DIR / "rules.tsv")

    detect = ["detect", "--root", str(root), "--signatures", str(garbage), "--out", str(tmp_path / "o1")]
    hill = ["hill", "encrypt", "--key", str(garbage), "--in", str(plain), "--out", str(tmp_path / "c")]
    bad_rules = ["heuristic", "--root", str(root), "--rules", str(garbage), "--out", str(tmp_path / "o2")]
    bad_allow = ["heuristic", "--root", str(root), "--rules", rules, "--allow", str(garbage), "--out", str(tmp_path / "o3")]

    for argv in (detect, hill, bad_rules, bad_allow):
        assert cli.main(argv) == 3
    assert capsys.readouterr().err.count("not UTF-8 text") == 4


def test_heuristic_exit_codes(tmp_path):
    root = tmp_path / "root"
    root.mkdir()
    (root / "notes.txt").write_text("nothing", encoding="utf-8")
    rules = FIXTURES_DIR / "rules.tsv"
    out_dir = tmp_path / "out"

    assert cli.main(["heuristic", "--root", str(root), "--rules", str(rules), "--out", str(out_dir)]) == 0

    (root / "hook.c").write_text("SetWindowsHookEx GetAsyncKeyState", encoding="utf-8")
    assert cli.main(["heuristic", "--root", str(root), "--rules", str(rules), "--out", str(out_dir)]) == 4
    assert "hook.c" in (out_dir / "heuristic.txt").read_text()

    allow = tmp_path / "allow.txt"
    allow.write_text(f"{root / 'hook.c'}\n", encoding="utf-8")
    code = cli.main(["heuristic", "--root", str(root), "--rules", str(rules), "--allow", str(allow), "--out", str(out_dir)])
    assert code == 0


def test_replay_writes_canonical_script(tmp_path, capsys):
    out = tmp_path / "canonical.txt"

    assert cli.main(["replay", "--script", str(FIXTURES_DIR / "sample_script.txt"), "--out", str(out)]) == 0
    assert len(load_event_script(out)) == 5
    assert "replayed 5 event(s)" in capsys.readouterr().out


def test_replay_malformed_script_exits_three(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 key_press a\n5 teleport\n", encoding="utf-8")

    assert cli.main(["replay", "--script", str(bad), "--out", str(tmp_path / "o.txt")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_capture_shows_banner_and_records_stdin(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("hi\n"))
    out = tmp_path / "captured.txt"

    assert cli.main(["capture", "--out", str(out)]) == 0

    stdout = capsys.readouterr().out
    assert "consented" in stdout
    assert [event.key for event in load_event_script(out).events] == ["h", "i", "ENTER"]


def test_hill_file_round_trip(tmp_path):
    key_path = tmp_path / "key.txt"
    assert cli.main(["hill", "keygen", "--size", "3", "--modulus", "256", "--seed", "5", "--out", str(key_path)]) == 0
    plain = tmp_path / "plain.bin"
    plain.write_bytes(b"attack at dawn\x00\xff")
    cipher = tmp_path / "cipher.bin"
    recovered = tmp_path / "recovered.bin"

    assert cli.main(["hill", "encrypt", "--key", str(key_path), "--in", str(plain), "--out", str(cipher)]) == 0
    assert cli.main(["hill", "decrypt", "--key", str(key_path), "--in", str(cipher), "--out", str(recovered)]) == 0
    assert recovered.read_bytes() == plain.read_bytes()


def test_hill_rejects_non_invertible_key_file(tmp_path, capsys):
    key_path = tmp_path / "bad.key"
    key_path.write_text("2 256\n2 0\n0 1\n", encoding="utf-8")
    plain = tmp_path / "plain.bin"
    plain.write_bytes(b"x")

    assert cli.main(["hill", "encrypt", "--key", str(key_path), "--in", str(plain), "--out", str(tmp_path / "c")]) == 3
    assert "even" in capsys.readouterr().err


def test_letters_mode_file_encrypt(tmp_path):
    key_path = tmp_path / "letters.key"
    key_path.write_text(dump_key(make_key([[3, 3], [2, 5]], 26)), encoding="utf-8")
    plain = tmp_path / "plain.txt"
    plain.write_bytes(b"HELP")
    cipher = tmp_path / "cipher.bin"

    assert cli.main(["hill", "encrypt", "--key", str(key_path), "--in", str(plain), "--out", str(cipher)]) == 0
    assert cipher.read_bytes().endswith(b"HIAT")


def test_send_and_read_log_through_cli(log_server, key_file, tmp_path, capsys):
    script_path = tmp_path / "script.txt"
    script = generate_synthetic(seed=21, count=12)
    script_path.write_bytes(serialize_events(script))

    code = cli.main(
        ["send", "--to", log_server.address, "--script", str(script_path), "--key", str(key_file), "--batch", "5"]
    )
    assert code == 0
    assert "3 frame(s)" in capsys.readouterr().out

    out = tmp_path / "recovered.txt"
    assert cli.main(["read-log", "--log", str(log_server.config.log_path), "--key", str(key_file), "--out", str(out)]) == 0
    assert out.read_bytes() == serialize_events(script)

    assert cli.main(["read-log", "--log", str(log_server.config.log_path), "--key", str(key_file)]) == 0
    assert capsys.readouterr().out == serialize_events(script).decode("utf-8")


def test_read_log_corrupt_file_exits_three(tmp_path, key_file):
    log = tmp_path / "corrupt.klf"
    log.write_bytes(b"XXXXgarbage")

    assert cli.main(["read-log", "--log", str(log), "--key", str(key_file)]) == 3


def test_send_without_server_exits_three(tmp_path, key_file):
    script_path = tmp_path / "script.txt"
    script_path.write_bytes(serialize_events(generate_synthetic(seed=1, count=2)))

    code = cli.main(["send", "--to", "127.0.0.1:1", "--script", str(script_path), "--key", str(key_file), "--timeout", "1"])

    assert code == 3


def test_serve_startup_failure_exits_two(monkeypatch, tmp_path):
    def failing_run_server(config, renderer=None):
        raise ServerStartupError("cannot bind")

    monkeypatch.setattr(cli, "run_server", failing_run_server)

    assert cli.main(["serve", "--bind", "127.0.0.1:0", "--log", str(tmp_path / "x.klf")]) == 2


def test_serve_passes_resolved_config(monkeypatch, tmp_path, key_file):
    seen = {}

    def fake_run_server(config, renderer=None):
        seen["config"] = config
        seen["renderer"] = renderer

    monkeypatch.setattr(cli, "run_server", fake_run_server)

    code = cli.main(["serve", "--bind", "127.0.0.1:0", "--log", str(tmp_path / "x.klf"), "--key", str(key_file)])

    assert code == 0
    assert seen["config"].bind_address == "127.0.0.1:0"
    assert seen["config"].render_key is not None
    assert seen["renderer"] is cli._render_batch
