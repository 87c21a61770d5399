"""Configuration, planning, execution and persistence of analysis runs."""

from multiquery.workflow.config import ConfigError, RunConfig, load_config, parse_config, serialize
from multiquery.workflow.plan import AnalysisPlan, build_plan
from multiquery.workflow.results import (
    ResultArtifact,
    ResultsError,
    artifacts_equal,
    read_results,
    write_results,
)
from multiquery.workflow.run import RunError, run

__all__ = [
    "AnalysisPlan",
    "ConfigError",
    "ResultArtifact",
    "ResultsError",
    "RunConfig",
    "RunError",
    "artifacts_equal",
    "build_plan",
    "load_config",
    "parse_config",
    "read_results",
    "run",
    "serialize",
    "write_results",
]
