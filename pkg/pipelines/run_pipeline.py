from __future__ import annotations

import argparse
import gzip
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import dlt

from keylog_guard.common.config import DEFAULT_HEADER_LEN
from keylog_guard.sources import ALL_RESOURCE_NAMES, keylog_guard_source

LOGGER = logging.getLogger(__name__)

PIPELINE_NAME = "keylog_guard"
DATASET_NAME = "keylog_guard_data"
MODES = {"full": "full_file", "header": "header_prefix"}


@dataclass(frozen=True, slots=True)
class PipelineInputs:
    """Files the resources read; a resource whose inputs are missing is skipped by the source."""

    log_path: str | None = None
    key_path: str | None = None
    scan_root: str | None = None
    signatures_path: str | None = None
    rules_path: str | None = None
    allowlist_path: str | None = None
    mode: str = "full"
    header_len: int = DEFAULT_HEADER_LEN

    def source_kwargs(self) -> dict[str, Any]:
        kwargs = asdict(self)
        kwargs["mode"] = MODES[self.mode]
        return kwargs


def run_pipeline(
    inputs: PipelineInputs,
    resources: Sequence[str] | None = None,
    *,
    dev_mode: bool = False,
    strict: bool = False,
) -> tuple[dlt.LoadInfo, dict[str, Any]]:
    pipeline = dlt.pipeline(
        pipeline_name=PIPELINE_NAME,
        destination="duckdb",
        dataset_name=DATASET_NAME,
        dev_mode=dev_mode,
    )
    load_info = pipeline.run(keylog_guard_source(resources_to_load=resources, **inputs.source_kwargs()))

    duration = 0.0
    if load_info.started_at and load_info.finished_at:
        duration = (load_info.finished_at - load_info.started_at).total_seconds()
    rows = table_row_counts(load_info)
    LOGGER.info("Loaded %s into %s in %.2fs", pipeline.pipeline_name, load_info.dataset_name, duration)
    for table, count in rows.items():
        LOGGER.info("%s: %s rows", table, count)

    if strict:
        load_info.raise_on_failed_jobs()
    return load_info, {"duration_seconds": duration, "rows": rows}


def table_row_counts(load_info: dlt.LoadInfo) -> dict[str, int]:
    """Rows written per data table, skipping dlt's own bookkeeping tables."""
    counts: Counter[str] = Counter()
    for package in load_info.load_packages:
        for job in (package.jobs or {}).get("completed_jobs", []):
            table = job.job_file_info.table_name if job.job_file_info else None
            if table and not table.startswith("_dlt_"):
                counts[table] += pipeline_rows(job.file_path)
    return dict(counts)


def pipeline_rows(job_file_path: str) -> int:
    """Count value tuples in an ``insert_values`` job file; other formats count as 0."""
    if not job_file_path.endswith("insert_values.gz"):
        return 0
    try:
        with gzip.open(job_file_path, "rt", encoding="utf-8") as fp:
            return sum(1 for line in fp if line.lstrip().startswith("("))
    except OSError:
        return 0


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Load keylog_guard logs and scan results into DuckDB with dlt")
    parser.add_argument("--resources", nargs="+", choices=ALL_RESOURCE_NAMES, help="Load only these resources.")

    monitor = parser.add_argument_group("server log")
    monitor.add_argument("--log", dest="log_path", help="Server log file for input_events.")
    monitor.add_argument("--key", dest="key_path", help="Pre-shared Hill key file for input_events.")

    scans = parser.add_argument_group("scans")
    scans.add_argument("--scan-root", help="Tree scanned by the scan resources.")
    scans.add_argument("--signatures", dest="signatures_path", help="Signature database for affected_files.")
    scans.add_argument("--rules", dest="rules_path", help="Heuristic rule file (bundled defaults when omitted).")
    scans.add_argument("--allow", dest="allowlist_path", help="Heuristic allowlist file.")
    scans.add_argument("--mode", choices=sorted(MODES), default="full", help="Signature hash mode.")
    scans.add_argument("--header-len", type=int, default=DEFAULT_HEADER_LEN, help="Header bytes hashed in header mode.")

    parser.add_argument("--dev-mode", action="store_true", help="Load into a fresh dataset with empty resource state.")
    parser.add_argument("--strict", action="store_true", help="Raise if any load job failed.")
    parser.add_argument("--list", action="store_true", help="Print the resource names and exit.")
    parser.add_argument("--json", dest="output_json", action="store_true", help="Print load info and row counts as JSON.")
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> None:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    if args.list:
        print("\n".join(ALL_RESOURCE_NAMES))
        return

    inputs = PipelineInputs(
        log_path=args.log_path,
        key_path=args.key_path,
        scan_root=args.scan_root,
        signatures_path=args.signatures_path,
        rules_path=args.rules_path,
        allowlist_path=args.allowlist_path,
        mode=args.mode,
        header_len=args.header_len,
    )
    load_info, summary = run_pipeline(inputs, args.resources, dev_mode=args.dev_mode, strict=args.strict)

    if args.output_json:
        print(json.dumps({**load_info.asdict(), "summary": summary}, default=str, indent=2))


if __name__ == "__main__":
    main()
