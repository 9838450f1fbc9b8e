"""Configuration, orchestration, invariant suites and the command-line interface."""

from .checks import CheckReport, SuiteResult, run_check
from .config import ConfigError, RunConfig, load_config
from .runner import CSV_COLUMNS, RunError, RunResult, SweepRecord, run_effective, run_microscopic, run_sweep

__all__ = [
    "CSV_COLUMNS", "CheckReport", "ConfigError", "RunConfig", "RunError", "RunResult",
    "SuiteResult", "SweepRecord", "load_config", "run_check", "run_effective",
    "run_microscopic", "run_sweep",
]
