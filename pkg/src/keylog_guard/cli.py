"""Command-line entry point: ``keylog-guard <subcommand> ...``.

Exit codes are the machine contract: 0 success, 1 usage error, 2 I/O error,
3 protocol or format error, 4 when a scan flagged something.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from keylog_guard.common.config import DEFAULT_BIND_ADDRESS, resolve_client_settings, resolve_scan_settings
from keylog_guard.common.errors import EXIT_IO, EXIT_USAGE, CaptureError, KeylogGuardError, UsageError
from keylog_guard.detector.heuristics import (
    Allowlist,
    heuristic_scan,
    load_allowlist,
    load_rules,
    write_heuristic_report,
)
from keylog_guard.detector.signatures import HashMode, load_signatures, scan, write_reports
from keylog_guard.monitor.events import (
    EventScript,
    capture_interactive,
    load_event_script,
    serialize_events,
)
from keylog_guard.monitor.hill import (
    BYTE_MODULUS,
    DEFAULT_BLOCK_SIZE,
    blob_from_bytes,
    blob_to_bytes,
    decrypt,
    dump_key,
    encrypt,
    generate_key,
    load_key,
)
from keylog_guard.monitor.transport import BatchNotice, read_log, resolve_server_config, run_server, send_log

EXIT_OK = 0
EXIT_FLAGGED = 4

CONSENT_BANNER = """\
============================================================
 keylog-guard interactive capture
 Everything typed into THIS terminal is recorded as key
 events and written to the output file named on the command
 line. Capture only your own, consented input.
 Finish with end-of-file (Ctrl-D, or Ctrl-Z then Enter).
============================================================"""

LOGGER = logging.getLogger(__name__)


class CliArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting, so ``main`` owns the exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(
        prog="keylog-guard",
        description="Consented keystroke monitoring pipeline and anti-keylogger scanners.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging.")
    subcommands = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    subcommands.required = True

    capture = subcommands.add_parser("capture", help="Capture key events typed into this terminal (consented).")
    capture.add_argument("--out", required=True, help="Event script file to write.")
    capture.set_defaults(handler=_cmd_capture)

    replay = subcommands.add_parser("replay", help="Validate a replay script and write its canonical form.")
    replay.add_argument("--script", required=True, help="Event script to replay.")
    replay.add_argument("--out", required=True, help="Canonical event script file to write.")
    replay.set_defaults(handler=_cmd_replay)

    serve = subcommands.add_parser("serve", help="Receive encrypted event batches and append them to a log file.")
    serve.add_argument("--bind", help=f"host:port to listen on (default: configured or {DEFAULT_BIND_ADDRESS}).")
    serve.add_argument("--log", help="Log file frames are appended to (default: configured value).")
    serve.add_argument("--key", help="Optional key file; when given, accepted batches are decrypted for display only.")
    serve.add_argument("--max-frame-bytes", type=_positive_int, help="Reject frames with larger payloads.")
    serve.set_defaults(handler=_cmd_serve)

    send = subcommands.add_parser("send", help="Encrypt an event script and ship it to a server.")
    send.add_argument("--to", required=True, help="Server host:port.")
    send.add_argument("--script", required=True, help="Event script to send.")
    send.add_argument("--key", required=True, help="Pre-shared Hill key file.")
    send.add_argument("--batch", type=_positive_int, help="Events per frame (default: configured or 50).")
    send.add_argument("--timeout", type=float, help="Seconds to wait for each ack (default: configured or 10).")
    send.add_argument("--retries", type=_non_negative_int, default=0, help="Connection retries with backoff.")
    send.set_defaults(handler=_cmd_send)

    read = subcommands.add_parser("read-log", help="Decrypt a server log back into an event script.")
    read.add_argument("--log", required=True, help="Server log file.")
    read.add_argument("--key", required=True, help="Pre-shared Hill key file.")
    read.add_argument("--out", help="Write the script here instead of stdout.")
    read.set_defaults(handler=_cmd_read_log)

    detect = subcommands.add_parser("detect", help="Scan a tree against a signature database.")
    detect.add_argument("--root", required=True, help="File or directory to scan.")
    detect.add_argument("--signatures", required=True, help="Signature database (signatures.txt).")
    detect.add_argument("--mode", choices=("full", "header"), default="full", help="Hash whole files or only headers.")
    detect.add_argument("--header-len", type=_positive_int, help="Header bytes hashed in header mode (default 1024).")
    detect.add_argument("--out", required=True, help="Directory for affected.txt, errors.txt and result.txt.")
    detect.add_argument("--workers", type=_positive_int, help="Parallel hashing threads.")
    detect.set_defaults(handler=_cmd_detect)

    heuristic = subcommands.add_parser("heuristic", help="Score files by keylogger-characteristic tokens.")
    heuristic.add_argument("--root", required=True, help="File or directory to scan.")
    heuristic.add_argument("--rules", required=True, help="Rule file (weight<TAB>token<TAB>description, threshold N).")
    heuristic.add_argument("--allow", help="Allowlist file, one absolute path per line.")
    heuristic.add_argument("--out", required=True, help="Directory for heuristic.txt.")
    heuristic.add_argument("--workers", type=_positive_int, help="Parallel scanning threads.")
    heuristic.set_defaults(handler=_cmd_heuristic)

    hill = subcommands.add_parser("hill", help="Hill cipher file operations.")
    actions = hill.add_subparsers(dest="hill_action", metavar="ACTION")
    actions.required = True
    for action, handler in (("encrypt", _cmd_hill_encrypt), ("decrypt", _cmd_hill_decrypt)):
        sub = actions.add_parser(action, help=f"{action.capitalize()} a file with a Hill key.")
        sub.add_argument("--key", required=True, help="Hill key file.")
        sub.add_argument("--in", dest="input_path", required=True, help="Input file.")
        sub.add_argument("--out", required=True, help="Output file.")
        sub.set_defaults(handler=handler)
    keygen = actions.add_parser("keygen", help="Generate a random invertible key file.")
    keygen.add_argument("--size", type=_positive_int, default=DEFAULT_BLOCK_SIZE, help="Block size n (2-8).")
    keygen.add_argument("--modulus", type=int, choices=(26, 256), default=BYTE_MODULUS, help="Modulus m.")
    keygen.add_argument("--seed", type=int, help="Seed for reproducible keys.")
    keygen.add_argument("--out", required=True, help="Key file to write.")
    keygen.set_defaults(handler=_cmd_hill_keygen)

    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _write_script(path: str, script: EventScript) -> None:
    Path(path).write_bytes(serialize_events(script))


def _cmd_capture(args: argparse.Namespace) -> int:
    print(CONSENT_BANNER, flush=True)
    try:
        script = capture_interactive(sys.stdin)
    except CaptureError as exc:
        _write_script(args.out, exc.script)
        raise
    _write_script(args.out, script)
    print(f"captured {len(script)} event(s) into {args.out}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    script = load_event_script(args.script)
    _write_script(args.out, script)
    print(f"replayed {len(script)} event(s) from {args.script} into {args.out}")
    return EXIT_OK


def _render_batch(notice: BatchNotice) -> None:
    if notice.events is None:
        print(f"[batch {notice.sequence}] {notice.peer}: {notice.original_len} encrypted byte(s)", flush=True)
        return
    print(f"[batch {notice.sequence}] {notice.peer}: {len(notice.events)} event(s)", flush=True)
    for event in notice.events.events:
        print(f"    {event.to_line()}", flush=True)


def _cmd_serve(args: argparse.Namespace) -> int:
    config = resolve_server_config(
        bind_address=args.bind,
        log_path=args.log,
        max_frame_bytes=args.max_frame_bytes,
        render_key=load_key(args.key) if args.key else None,
    )
    try:
        run_server(config, renderer=_render_batch)
    except KeyboardInterrupt:
        LOGGER.info("Interrupted; shutting down")
    return EXIT_OK


def _cmd_send(args: argparse.Namespace) -> int:
    settings = resolve_client_settings(timeout=args.timeout, batch_size=args.batch)
    script = load_event_script(args.script)
    key = load_key(args.key)
    frames = send_log(
        args.to, script, key, settings.batch_size, timeout=settings.timeout, max_retries=args.retries
    )
    print(f"sent {len(script)} event(s) in {frames} frame(s) to {args.to}")
    return EXIT_OK


def _cmd_read_log(args: argparse.Namespace) -> int:
    script = read_log(args.log, load_key(args.key))
    if args.out:
        _write_script(args.out, script)
    else:
        sys.stdout.write(serialize_events(script).decode("utf-8"))
    return EXIT_OK


def _prepare_out_dir(path: str) -> Path:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _cmd_detect(args: argparse.Namespace) -> int:
    settings = resolve_scan_settings(header_len=args.header_len, workers=args.workers)
    mode = HashMode.HEADER_PREFIX if args.mode == "header" else HashMode.FULL_FILE
    db = load_signatures(args.signatures, mode, settings.header_len)
    report = scan(args.root, db, settings.workers)
    written = write_reports(report, _prepare_out_dir(args.out))
    print(
        f"scanned {report.scanned_count} file(s): {len(report.affected)} affected, "
        f"{len(report.error_entries)} error(s)"
    )
    for path in written:
        print(f"  wrote {path}")
    if report.affected:
        print("Review affected.txt and decide what to do with each listed file.")
        return EXIT_FLAGGED
    return EXIT_OK


def _cmd_heuristic(args: argparse.Namespace) -> int:
    settings = resolve_scan_settings(workers=args.workers)
    rules = load_rules(args.rules)
    allowlist = load_allowlist(args.allow) if args.allow else Allowlist()
    report = heuristic_scan(args.root, rules, allowlist, settings.workers)
    written = write_heuristic_report(report, _prepare_out_dir(args.out))
    print(
        f"scanned {report.scanned_count} file(s): {len(report.findings)} flagged, "
        f"{report.allowlisted} allowlisted, {len(report.error_entries)} error(s)"
    )
    print(f"  wrote {written}")
    if report.findings:
        print("Flagged files may be false positives; add trusted paths to an allowlist (--allow).")
        return EXIT_FLAGGED
    return EXIT_OK


def _cmd_hill_encrypt(args: argparse.Namespace) -> int:
    key = load_key(args.key)
    blob = encrypt(Path(args.input_path).read_bytes(), key)
    Path(args.out).write_bytes(blob_to_bytes(blob))
    return EXIT_OK


def _cmd_hill_decrypt(args: argparse.Namespace) -> int:
    key = load_key(args.key)
    blob = blob_from_bytes(Path(args.input_path).read_bytes())
    Path(args.out).write_bytes(decrypt(blob, key))
    return EXIT_OK


def _cmd_hill_keygen(args: argparse.Namespace) -> int:
    key = generate_key(args.size, args.modulus, args.seed)
    Path(args.out).write_text(dump_key(key), encoding="utf-8")
    print(f"wrote {key.n}x{key.n} key mod {key.m} to {args.out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except KeylogGuardError as exc:
        LOGGER.debug("Command %s failed", args.subcommand, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def run(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
