from .handover import HandoverError, HandoverSession, Phase
from .relocation import (
    Action,
    InstanceView,
    STRATEGIES,
    RelocationConfig,
    WorkerLoadSnapshot,
    choose_target_worker,
    event_type_consumption,
    monitor_tick,
    search_types_by_input_similarity,
    search_types_by_resource_usage,
)
from .stats import EventTypeRuntimeStats, FlowMeter
from .worker import ACTIVE, DRAINING, STARTING, TERMINATED, Worker, WorkerConfig

WorkerInstance = Worker

__all__ = [
    "ACTIVE",
    "Action",
    "DRAINING",
    "EventTypeRuntimeStats",
    "FlowMeter",
    "HandoverError",
    "HandoverSession",
    "InstanceView",
    "Phase",
    "RelocationConfig",
    "STARTING",
    "STRATEGIES",
    "TERMINATED",
    "Worker",
    "WorkerConfig",
    "WorkerInstance",
    "WorkerLoadSnapshot",
    "choose_target_worker",
    "event_type_consumption",
    "monitor_tick",
    "search_types_by_input_similarity",
    "search_types_by_resource_usage",
]
