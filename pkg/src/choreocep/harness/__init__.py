from .cluster import NO_BALANCING, Cluster, RunResult, reference_config, run_scenario, scenario_events, write_outputs
from .metrics import METRICS_HEADER, MetricsRecord, build_metrics, percentile, read_metrics_csv, write_metrics_csv
from .ridesharing import (
    PRIMITIVE_TYPES,
    RampProfile,
    build_ridesharing_catalog,
    generate_ridesharing,
    poisson_times,
)
from .scenario import ScenarioConfig, ScenarioError, load_scenario
from .trace import PRODUCER_ID, DiffReport, InputMismatchError, Trace, TraceFormatError, TraceRecorder, input_digest, replay_compare

__all__ = [
    "Cluster",
    "DiffReport",
    "InputMismatchError",
    "METRICS_HEADER",
    "NO_BALANCING",
    "MetricsRecord",
    "PRIMITIVE_TYPES",
    "PRODUCER_ID",
    "RampProfile",
    "RunResult",
    "ScenarioConfig",
    "ScenarioError",
    "Trace",
    "TraceFormatError",
    "TraceRecorder",
    "build_metrics",
    "read_metrics_csv",
    "build_ridesharing_catalog",
    "generate_ridesharing",
    "input_digest",
    "load_scenario",
    "percentile",
    "poisson_times",
    "reference_config",
    "replay_compare",
    "run_scenario",
    "scenario_events",
    "write_metrics_csv",
    "write_outputs",
]
