"""Choosing what to relocate, where to, and when.

The two search procedures follow the published pseudocode line by line;
the places where the pseudocode is ambiguous are resolved as noted inline.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from ..context import ContextState

STRATEGIES = ("input_similarity", "resource_usage")


@dataclass
class RelocationConfig:
    """Thresholds that drive relocation and scaling.

    ``max_flow`` and ``min_flow`` are in events/second, ``max_resource`` in
    resource units (buffered context events plus one per assigned type).
    """

    max_flow: float = 200.0
    max_resource: float = 2000.0
    min_flow: float = 20.0
    monitor_period_ms: int = 1000
    strategy: str = "input_similarity"

    def __post_init__(self) -> None:
        if min(self.max_flow, self.max_resource, self.min_flow, self.monitor_period_ms) <= 0:
            raise ValueError("relocation thresholds and monitor period must be > 0")
        if self.min_flow >= self.max_flow:
            raise ValueError(f"min_flow ({self.min_flow}) must be below max_flow ({self.max_flow})")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


@dataclass
class InstanceView:
    """What the search procedures need to know about one worker.

    ``event_types`` maps each assigned type to its input types; ``flows``
    holds each type's incoming rate; ``F`` is the instance's incoming flow
    with shared inputs counted once; ``IC`` its resource consumption.
    """

    event_types: dict[str, tuple[str, ...]]
    flows: dict[str, float]
    F: float
    IC: float = 0.0

    @property
    def input_event_types(self) -> list[str]:
        return sorted({i for ins in self.event_types.values() for i in ins})


@dataclass
class WorkerLoadSnapshot:
    worker_id: str
    F: float
    IC: float
    n_types: int
    timestamp: int
    lifecycle: str = "ACTIVE"
    busy: bool = False

    @classmethod
    def from_message(cls, msg: Mapping) -> WorkerLoadSnapshot:
        return cls(
            worker_id=msg["worker_id"],
            F=msg["F"],
            IC=msg["IC"],
            n_types=msg["n_types"],
            timestamp=msg.get("timestamp", msg.get("time", 0)),
            lifecycle=msg.get("lifecycle", "ACTIVE"),
            busy=msg.get("busy", False),
        )


def search_types_by_input_similarity(
    instance: InstanceView, max_flow: float, rng: random.Random
) -> list[str]:
    """Pick types to relocate, preferring those whose inputs others do not share.

    Inputs are visited from least to most used (ties by name). Popping an
    input used by fewer than all types relocates every type that consumes
    it; an input used by all of them falls back to one random unselected
    type. Already-selected types are never re-added and their flow is
    subtracted once. The loop also stops when both the input list and the
    unselected types are exhausted.
    """
    F = instance.F
    types = sorted(instance.event_types)
    uses_by_input: dict[str, int] = {}
    for input_type in instance.input_event_types:
        uses_by_input[input_type] = 0
        for name in types:
            if input_type in instance.event_types[name]:
                uses_by_input[input_type] += 1
    ordered = deque(sorted(uses_by_input.items(), key=lambda pair: (pair[1], pair[0])))
    to_relocate: list[str] = []
    selected: set[str] = set()
    n_types = len(types)

    while F > max_flow:
        less_used = ordered.popleft() if ordered else None
        if less_used is not None and less_used[1] < n_types:
            for name in types:
                if less_used[0] in instance.event_types[name] and name not in selected:
                    to_relocate.append(name)
                    selected.add(name)
                    F -= instance.flows.get(name, 0.0)
            continue
        remaining = [name for name in types if name not in selected]
        if not remaining:
            if ordered:
                continue
            break
        pick = rng.choice(remaining)
        to_relocate.append(pick)
        selected.add(pick)
        F -= instance.flows.get(pick, 0.0)
    return to_relocate


def event_type_consumption(
    context: ContextState | None, per_event_cost: float = 1.0, overhead: float = 1.0
) -> float:
    """Resource units attributed to one type; 0 when it has no stored context."""
    if context is None:
        return 0.0
    return context.buffered_count * per_event_cost + overhead


def search_types_by_resource_usage(
    instance: InstanceView,
    max_resource: float,
    contexts: Mapping[str, ContextState | None],
    per_event_cost: float = 1.0,
    overhead: float = 1.0,
) -> list[str]:
    """Relocate the biggest consumers first until consumption is under ``max_resource``.

    Consumption ties are broken by type name.
    """
    IC = instance.IC
    ecs = [
        (name, event_type_consumption(contexts.get(name), per_event_cost, overhead))
        for name in sorted(instance.event_types)
    ]
    ordered = deque(sorted(ecs, key=lambda pair: (-pair[1], pair[0])))
    to_relocate: list[str] = []
    while IC > max_resource and ordered:
        biggest = ordered.popleft()
        to_relocate.append(biggest[0])
        IC -= biggest[1]
    return to_relocate


def choose_target_worker(
    snapshots: Sequence[WorkerLoadSnapshot],
    need: float,
    limit: float,
    metric: str = "IC",
    now: int | None = None,
    max_age_ms: int | None = None,
) -> str | None:
    """Least-consuming worker that stays under ``limit`` after taking ``need``.

    ``metric`` names the snapshot field the limit applies to (``"IC"`` or
    ``"F"``); the winner is always the minimum IC, ties by worker id.
    """
    fits = []
    for s in snapshots:
        if now is not None and max_age_ms is not None and now - s.timestamp > max_age_ms:
            continue
        if getattr(s, metric) + need < limit:
            fits.append(s)
    if not fits:
        return None
    return min(fits, key=lambda s: (s.IC, s.worker_id)).worker_id


@dataclass
class Action:
    kind: str  # "none" | "initiate_relocation" | "initiate_scale_in"
    types: list[str] = field(default_factory=list)


NO_ACTION = Action("none")


def monitor_tick(
    instance: InstanceView,
    cfg: RelocationConfig,
    alive_workers: int,
    rng: random.Random,
    contexts: Callable[[], Mapping[str, ContextState | None]] | None = None,
    per_event_cost: float = 1.0,
    overhead: float = 1.0,
) -> Action:
    """Decide what an active worker should do this monitoring period."""
    if cfg.strategy == "input_similarity":
        if instance.F > cfg.max_flow:
            chosen = search_types_by_input_similarity(instance, cfg.max_flow, rng)
            if chosen:
                return Action("initiate_relocation", chosen)
    elif instance.IC > cfg.max_resource:
        ctx = contexts() if contexts is not None else {}
        chosen = search_types_by_resource_usage(
            instance, cfg.max_resource, ctx, per_event_cost, overhead
        )
        if chosen:
            return Action("initiate_relocation", chosen)
    if instance.F < cfg.min_flow and instance.event_types and alive_workers >= 2:
        return Action("initiate_scale_in", sorted(instance.event_types))
    return NO_ACTION
