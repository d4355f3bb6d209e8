"""Pipeline entry points for loading keylog_guard outputs with dlt."""

__all__ = ["run_pipeline"]
