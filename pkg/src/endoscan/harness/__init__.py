from .config import ConfigError, ScenarioConfig, load_config, load_scenario, parse_config, scenario_names
from .runner import (
    BenchResult,
    Metrics,
    RunResult,
    SweepResult,
    bench_registration,
    calibrate,
    calibrate_deformation,
    make_bench_corpus,
    run,
    workspace_sweep,
)

__all__ = [
    "BenchResult", "ConfigError", "Metrics", "RunResult", "ScenarioConfig", "SweepResult",
    "bench_registration", "calibrate", "calibrate_deformation", "load_config", "load_scenario",
    "make_bench_corpus", "parse_config", "run", "scenario_names", "workspace_sweep",
]
