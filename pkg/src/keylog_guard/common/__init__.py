"""Utilities shared by the monitor and detector halves of keylog_guard.

This package holds the exception hierarchy, configuration lookups and the
file tree walker used by both scanners.
"""
