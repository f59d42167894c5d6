"""Workload generation, experiment drivers and the command-line front end."""

from .config import ConfigError, WorkloadConfig, load_config, parse_config
from .metrics import Metrics, q1_csv
from .report import CompressionReport, report_compression
from .workload import Workload, build_engine, run_mixed, run_oltp

__all__ = [
    "ConfigError",
    "CompressionReport",
    "Metrics",
    "Workload",
    "WorkloadConfig",
    "build_engine",
    "load_config",
    "parse_config",
    "q1_csv",
    "report_compression",
    "run_mixed",
    "run_oltp",
]
