"""Scenario configuration, orchestration, recording and the command line."""
from .config import (
    BUNDLED,
    CHANNELS,
    ScenarioConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    loads_config,
    resolve_scenario,
    with_overrides,
)
from .recording import Recording, export_csv, export_plots, read_csv
from .runner import run_benchmark, run_scenario

__all__ = [
    "BUNDLED",
    "CHANNELS",
    "Recording",
    "ScenarioConfig",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "export_csv",
    "export_plots",
    "load_config",
    "loads_config",
    "read_csv",
    "resolve_scenario",
    "run_benchmark",
    "run_scenario",
    "with_overrides",
]
