from keylog_guard.cli import run

run()
