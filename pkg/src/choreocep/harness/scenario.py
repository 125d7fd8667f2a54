"""Scenario files: the JSON description of one experiment."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..worker import RelocationConfig, WorkerConfig

FAULT_ACTIONS = ("kill", "drop_rate", "duplicate_rate")


class ScenarioError(ValueError):
    """Invalid scenario; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]) -> None:
        super().__init__("invalid scenario: " + "; ".join(problems))
        self.problems = problems


@dataclass
class ScenarioConfig:
    """One experiment.

    ``ramp`` is a list of ``[time_s, rides_per_second]`` points. Fault
    entries are ``{"time_s", "action", ...}`` where ``kill`` names either a
    ``worker`` or ``owner_of`` an event type, and ``drop_rate`` /
    ``duplicate_rate`` set the broker's data-topic fault ``rate``.
    """

    name: str = "scenario"
    duration_s: float = 60.0
    ramp: list[list[float]] = field(default_factory=lambda: [[0, 4.0]])
    n_clients: int = 200
    n_drivers: int = 50
    seed: int = 0
    positions_per_ride: float = 3.0
    initial_workers: int = 1
    relocation: dict[str, Any] = field(default_factory=dict)
    worker: dict[str, Any] = field(default_factory=dict)
    faults: list[dict[str, Any]] = field(default_factory=list)
    forced_relocations: list[dict[str, Any]] = field(default_factory=list)
    drain_s: float = 0.0
    store_lag_ms: int = 0
    webhooks: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ScenarioError(problems)

    def problems(self) -> list[str]:
        out = []
        if not self.duration_s or self.duration_s <= 0:
            out.append(f"duration_s must be > 0, got {self.duration_s!r}")
        if not self.ramp:
            out.append("ramp needs at least one [time_s, rate] point")
        for pt in self.ramp:
            if not isinstance(pt, (list, tuple)) or len(pt) != 2:
                out.append(f"ramp point {pt!r} is not [time_s, rate]")
            elif pt[1] < 0:
                out.append(f"ramp rate {pt[1]} at t={pt[0]} is negative")
        if self.n_clients < 1 or self.n_drivers < 1:
            out.append("n_clients and n_drivers must be >= 1")
        if self.initial_workers < 1:
            out.append("initial_workers must be >= 1")
        if self.drain_s < 0 or self.store_lag_ms < 0:
            out.append("drain_s and store_lag_ms must be >= 0")
        try:
            self.worker_config()
        except (TypeError, ValueError) as exc:
            out.append(f"worker/relocation overrides: {exc}")
        for f in self.faults:
            action = f.get("action")
            if action not in FAULT_ACTIONS:
                out.append(f"fault action {action!r} not in {FAULT_ACTIONS}")
            if not isinstance(f.get("time_s"), (int, float)) or f["time_s"] < 0:
                out.append(f"fault {f!r} needs a non-negative time_s")
            if action == "kill" and ("worker" in f) == ("owner_of" in f):
                out.append(f"kill fault {f!r} needs exactly one of worker / owner_of")
            if action in ("drop_rate", "duplicate_rate") and not 0 <= f.get("rate", -1) <= 1:
                out.append(f"fault {f!r} needs a rate in [0, 1]")
        for r in self.forced_relocations:
            if not r.get("event_type") or not isinstance(r.get("time_s"), (int, float)):
                out.append(f"forced relocation {r!r} needs time_s and event_type")
        return out

    def relocation_config(self) -> RelocationConfig:
        return RelocationConfig(**self.relocation)

    def worker_config(self) -> WorkerConfig:
        return WorkerConfig(relocation=self.relocation_config(), **self.worker)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScenarioConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ScenarioError([f"unknown field {k!r}" for k in unknown])
        return cls(**d)

    def with_overrides(self, **changes: Any) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: not valid JSON ({exc})"]) from None
    if not isinstance(doc, dict):
        raise ScenarioError([f"{path}: top level must be an object"])
    return ScenarioConfig.from_dict(doc)
