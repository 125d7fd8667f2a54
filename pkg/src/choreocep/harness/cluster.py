"""A simulated cluster on a virtual clock, and the experiment runner.

Everything runs in one thread. The runner interleaves three sources of
work in time order: timers (heartbeats, monitor ticks, scheduled faults),
producer events, and bus deliveries, draining the bus after each step.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..bus import Faults, InMemoryBus
from ..catalog import Catalog, CatalogService, WebhookDispatcher
from ..clock import Scheduler, VirtualClock
from ..events import Event
from ..statestore import InMemoryStateStore
from ..worker import Worker, WorkerConfig
from .metrics import MetricsRecord, build_metrics, write_metrics_csv
from .ridesharing import PRIMITIVE_TYPES, RampProfile, build_ridesharing_catalog, generate_ridesharing
from .scenario import ScenarioConfig
from .trace import PRODUCER_ID, TraceRecorder, input_digest

log = logging.getLogger(__name__)

NO_BALANCING = {"max_flow": 1e12, "max_resource": 1e12, "min_flow": 1e-9}


class MemoryWebhooks:
    """Web-hook transport that records calls instead of making them."""

    def __init__(self) -> None:
        self.calls: list[tuple[str, bytes]] = []

    def __call__(self, url: str, body: bytes) -> int:
        self.calls.append((url, body))
        return 200


class Cluster:
    def __init__(
        self,
        worker_config: WorkerConfig,
        seed: int = 0,
        store_lag_ms: int = 0,
        allow_spawn: bool = True,
        trace: bool = True,
    ) -> None:
        self.clock = VirtualClock()
        self.scheduler = Scheduler(self.clock)
        self.store = InMemoryStateStore(self.clock, lag_ms=store_lag_ms)
        self.trace = TraceRecorder(self.clock)
        self.bus = InMemoryBus(self.clock, seed=seed, tracer=self.trace if trace else None)
        self.webhooks = MemoryWebhooks()
        self.catalog = Catalog(self.store, dispatcher=WebhookDispatcher(self.webhooks, sleep=lambda ms: None))
        self.service = CatalogService(
            self.catalog,
            self.bus,
            self.scheduler,
            heartbeat_ms=worker_config.heartbeat_ms,
            reply_window_ms=worker_config.relocation.monitor_period_ms,
            spawn=self.spawn if allow_spawn else None,
        )
        self.worker_config = worker_config
        self.seed = seed
        self.allow_spawn = allow_spawn
        self.workers: dict[str, Worker] = {}
        self.instances: list[tuple[int, int]] = []
        self.kills: list[dict[str, Any]] = []
        self._next_id = 1

    # -- membership ------------------------------------------------------------

    def live(self) -> list[Worker]:
        return [w for w in self.workers.values() if w.alive]

    def spawn(self) -> str | None:
        """Start a new worker; None at the instance ceiling."""
        if len(self.live()) >= self.worker_config.max_instances:
            log.warning("instance ceiling %d reached", self.worker_config.max_instances)
            return None
        wid = f"w{self._next_id}"
        self._next_id += 1
        w = Worker(
            wid,
            self.bus,
            self.store,
            self.scheduler,
            self.worker_config,
            spawn=self.spawn if self.allow_spawn else None,
            seed=self.seed,
        )
        self.workers[wid] = w
        w.start()
        self._sample_instances()
        return wid

    def kill(self, worker_id: str) -> list[str]:
        """Crash a worker; returns the types it owned."""
        w = self.workers[worker_id]
        owned = w.owned()
        w.crash()
        self.trace.note(action="kill", worker=worker_id, owned=owned)
        self.kills.append({"time": self.clock.now, "worker": worker_id, "owned": owned})
        self._sample_instances()
        return owned

    def owner_of(self, event_type: str) -> str | None:
        for w in self.live():
            if event_type in w.owned():
                return w.id
        return None

    def _sample_instances(self) -> None:
        n = len(self.live())
        if self.instances and self.instances[-1][0] == self.clock.now:
            self.instances[-1] = (self.clock.now, n)
        else:
            self.instances.append((self.clock.now, n))

    # -- driving ---------------------------------------------------------------

    def settle(self) -> None:
        self.bus.pump()

    def run_until(self, t: int) -> None:
        """Fire every timer due at or before ``t`` and advance the clock to ``t``."""
        while True:
            nt = self.scheduler.next_time()
            if nt is None or nt > t:
                break
            self.scheduler.run_next()
            self.bus.pump()
            if self.live() and self.instances[-1][1] != len(self.live()):
                self._sample_instances()
        if t > self.clock.now:
            self.clock.advance_to(t)

    def publish(self, e: Event) -> None:
        self.run_until(e.occurrence_time)
        self.bus.publish(e.event_type, e, publisher=PRODUCER_ID)
        self.bus.pump()

    def register(self, definitions, webhooks: dict[str, list[str]] | None = None) -> None:
        for name in PRIMITIVE_TYPES:
            if name not in self.catalog:
                self.catalog.declare_primitive(name)
        webhooks = webhooks or {}
        for d in definitions:
            self.catalog.register_event_type(d, webhooks.get(d.name, ()))
            self.bus.pump()

    def assignments_settled(self) -> bool:
        owners = self.catalog.assignments()
        return all(w is not None and w in self.workers and self.workers[w].alive for w in owners.values())

    def stop(self) -> None:
        for w in self.live():
            for t in w._timers:
                t.cancel()
        self.service.stop()
        self.bus.stop()


@dataclass
class RunResult:
    config: ScenarioConfig
    events: list[Event]
    trace: TraceRecorder
    metrics: list[MetricsRecord]
    instances: list[tuple[int, int]]
    relocation_times: list[int]
    counters: dict[str, int]
    kills: list[dict[str, Any]] = field(default_factory=list)
    wall_s: float = 0.0
    cluster: Cluster | None = None

    @property
    def max_instances(self) -> int:
        return max(n for _, n in self.instances)

    @property
    def final_instances(self) -> int:
        return self.instances[-1][1]

    def summary(self) -> dict[str, Any]:
        return {
            "input_events": len(self.events),
            "relocations": len(self.relocation_times),
            "max_instances": self.max_instances,
            "final_instances": self.final_instances,
            "wall_seconds": round(self.wall_s, 3),
            **{k: self.counters[k] for k in sorted(self.counters)},
        }


def reference_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Same input, one worker, no balancing, no faults: the detection oracle."""
    return cfg.with_overrides(
        name=f"{cfg.name}-reference",
        initial_workers=1,
        relocation={**cfg.relocation, **NO_BALANCING},
        faults=[],
        forced_relocations=[],
    )


def scenario_events(cfg: ScenarioConfig) -> list[Event]:
    return generate_ridesharing(
        RampProfile(cfg.ramp),
        cfg.duration_s,
        n_clients=cfg.n_clients,
        n_drivers=cfg.n_drivers,
        seed=cfg.seed,
        positions_per_ride=cfg.positions_per_ride,
    )


def run_scenario(
    cfg: ScenarioConfig,
    strategy: str | None = None,
    events: list[Event] | None = None,
    out_dir: str | Path | None = None,
    keep_cluster: bool = False,
) -> RunResult:
    """Run one experiment; writes metrics.csv, trace.jsonl and manifest.json when ``out_dir`` is set."""
    started = time.perf_counter()
    if strategy is not None:
        cfg = cfg.with_overrides(relocation={**cfg.relocation, "strategy": strategy})
    wcfg = cfg.worker_config()
    cluster = Cluster(wcfg, seed=cfg.seed, store_lag_ms=cfg.store_lag_ms)
    if events is None:
        events = scenario_events(cfg)
    digest, n = input_digest(events)
    cluster.trace.header.update(
        {"scenario": cfg.name, "seed": cfg.seed, "input_digest": digest, "input_events": n}
    )
    for _ in range(cfg.initial_workers):
        cluster.spawn()
    cluster.settle()
    cluster.register(build_ridesharing_catalog(cfg.n_clients, cfg.seed), cfg.webhooks)
    if not cluster.assignments_settled():
        # replies arrive within one reply window; let the catalog decide
        cluster.run_until(cluster.clock.now + 2 * wcfg.relocation.monitor_period_ms)

    for f in cfg.faults:
        cluster.scheduler.call_at(int(f["time_s"] * 1000), lambda f=f: _apply_fault(cluster, f))
    for r in cfg.forced_relocations:
        cluster.scheduler.call_at(int(r["time_s"] * 1000), lambda r=r: _force(cluster, r))
    cluster.scheduler.call_every(1000, cluster._sample_instances, first=0)

    for e in events:
        cluster.publish(e)
    cluster.run_until(int((cfg.duration_s + cfg.drain_s) * 1000))
    cluster._sample_instances()
    cluster.stop()

    relocation_times = [
        r["time"]
        for r in cluster.trace.records
        if r.get("kind") == "assignment_update" and r.get("reason") in ("relocate", "scale_in")
    ]
    counters: dict[str, int] = {}
    for w in cluster.workers.values():
        for k, v in w.counters.items():
            counters[k] = counters.get(k, 0) + v
    counters["webhook_calls"] = len(cluster.webhooks.calls)
    detections = [
        r for r in cluster.trace.records
        if r["record"] == "msg" and r["publisher"] != PRODUCER_ID and "occurrence_time" in r
    ]
    metrics = build_metrics(detections, cluster.instances, relocation_times)
    result = RunResult(
        config=cfg,
        events=events,
        trace=cluster.trace,
        metrics=metrics,
        instances=list(cluster.instances),
        relocation_times=relocation_times,
        counters=counters,
        kills=cluster.kills,
        wall_s=time.perf_counter() - started,
        cluster=cluster if keep_cluster else None,
    )
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _apply_fault(cluster: Cluster, f: dict[str, Any]) -> None:
    action = f["action"]
    if action == "kill":
        wid = f.get("worker") or cluster.owner_of(f["owner_of"])
        if wid is None or wid not in cluster.workers or not cluster.workers[wid].alive:
            log.warning("kill fault %s: no live target", f)
            cluster.trace.note(action="kill_skipped", spec=f)
            return
        cluster.kill(wid)
    elif action == "drop_rate":
        cluster.bus.faults = Faults(drop=f["rate"], duplicate=cluster.bus.faults.duplicate)
        cluster.trace.note(action=action, rate=f["rate"])
    elif action == "duplicate_rate":
        cluster.bus.faults = Faults(drop=cluster.bus.faults.drop, duplicate=f["rate"])
        cluster.trace.note(action=action, rate=f["rate"])


def _force(cluster: Cluster, r: dict[str, Any]) -> None:
    owner = cluster.owner_of(r["event_type"])
    if owner is None:
        cluster.trace.note(action="force_skipped", event_type=r["event_type"])
        return
    cluster.trace.note(action="force_relocation", event_type=r["event_type"], worker=owner)
    cluster.workers[owner].request_relocation([r["event_type"]])


def write_outputs(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.metrics, out / "metrics.csv")
    result.trace.write(out / "trace.jsonl")
    manifest = {
        "scenario": result.config.to_dict(),
        "seed": result.config.seed,
        "strategy": result.config.relocation.get("strategy", "input_similarity"),
        "input_digest": result.trace.header.get("input_digest"),
        "summary": result.summary(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out
