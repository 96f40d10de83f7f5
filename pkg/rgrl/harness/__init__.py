"""Command line, run configuration, metrics and experiment orchestration."""
