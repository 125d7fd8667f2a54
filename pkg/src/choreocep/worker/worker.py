"""The CEP worker: detects its assigned event types and balances itself.

A worker is a set of bus handlers plus two timers (heartbeat and monitor).
Everything it knows about other workers comes from their heartbeats and
from the load snapshots they send back when asked; the cataloger is only
told about relocations once they are done.

Relocation, seen from the overloaded (source) side:

1. broadcast ``snapshot_request`` on ``ctl.loads`` and collect
   ``load_snapshot`` replies for one monitor period;
2. pick a target (``choose_target_worker``) or spawn one, then send a
   ``relocation_proposal``; a refusal gets one retry with the next best
   candidate, then a scale-out;
3. once accepted, checkpoint each type and announce ``STATE_TRANSFERRED``;
   the target, already buffering the type's inputs, loads the checkpoint,
   replays its buffer and starts emitting (``DUAL_DETECTION``);
4. compare the ids both sides emit; after ``comparison_window`` matches,
   drop the type, tell the catalog and send ``COMPLETED`` to the target.
"""

from __future__ import annotations

import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from ..bus import InMemoryBus, Message, Subscription
from ..clock import Scheduler
from ..context import ContextState
from ..definitions import EventTypeDefinition
from ..engine import evaluate, new_state
from ..errors import EvaluationError
from ..protocol import (
    ASSIGN_TOPIC,
    ASSIGNMENTS_TOPIC,
    CATALOG_ID,
    DETECTIONS_TOPIC,
    HEARTBEAT_TOPIC,
    LOADS_TOPIC,
    ProtocolError,
    inbox,
    make,
    validate,
)
from ..statestore import InMemoryStateStore, StoreUnavailable
from .handover import HandoverSession, Phase
from .relocation import (
    InstanceView,
    RelocationConfig,
    WorkerLoadSnapshot,
    choose_target_worker,
    event_type_consumption,
    monitor_tick,
)
from .stats import EventTypeRuntimeStats, FlowMeter

log = logging.getLogger(__name__)

STARTING, ACTIVE, DRAINING, TERMINATED = "STARTING", "ACTIVE", "DRAINING", "TERMINATED"
MISSED_HEARTBEATS = 3
STATE_RETRY_MS = 20


@dataclass
class WorkerConfig:
    relocation: RelocationConfig = field(default_factory=RelocationConfig)
    heartbeat_ms: int = 1000
    flow_window_ms: int = 5000
    checkpoint_every: int = 100
    comparison_window: int = 10
    handover_timeout_ms: int = 30_000
    max_instances: int = 64
    service_ms: float = 1.0
    per_event_cost: float = 1.0
    type_overhead: float = 1.0
    # an empty worker waits this many monitor periods before leaving
    idle_grace_periods: int = 3

    def __post_init__(self) -> None:
        if self.comparison_window < 0:
            raise ValueError("comparison_window must be >= 0")
        if self.comparison_window == 0:
            log.warning("comparison_window=0: handovers are acknowledged without comparing outputs")
        if min(self.heartbeat_ms, self.checkpoint_every, self.handover_timeout_ms, self.max_instances) <= 0:
            raise ValueError("heartbeat, checkpoint cadence, timeout and ceiling must be positive")
        if self.service_ms < 0:
            raise ValueError("service_ms must be >= 0")


@dataclass
class TypeRuntime:
    definition: EventTypeDefinition
    state: ContextState
    version: int = 0
    notify: bool = False
    subs: dict[str, Subscription] = field(default_factory=dict)
    # "active": sole or dual detector; "buffering": incoming, waiting for state
    mode: str = "active"
    buffer: list[Message] = field(default_factory=list)
    since_checkpoint: int = 0
    last_input_id: str | None = None
    stats: EventTypeRuntimeStats | None = None

    @property
    def name(self) -> str:
        return self.definition.name


@dataclass
class RelocationPlan:
    plan_id: str
    purpose: str  # "relocate" | "scale_in"
    types: list[str]
    need: float
    started_at: int
    deadline: int
    state: str = "collecting"  # collecting | proposing | handover
    replies: dict[str, WorkerLoadSnapshot] = field(default_factory=dict)
    refused: set[str] = field(default_factory=set)
    target: str | None = None
    retries: int = 0
    sessions: dict[str, HandoverSession] = field(default_factory=dict)


@dataclass
class _Peer:
    last_heartbeat: int
    lifecycle: str
    F: float = 0.0
    IC: float = 0.0
    n_types: int = 0
    busy: bool = False


class Worker:
    """One CEP worker instance (``WorkerInstance``)."""

    def __init__(
        self,
        worker_id: str,
        bus: InMemoryBus,
        store: InMemoryStateStore,
        scheduler: Scheduler,
        config: WorkerConfig | None = None,
        spawn: Callable[[], str | None] | None = None,
        seed: int = 0,
    ) -> None:
        self.id = worker_id
        self.bus = bus
        self.store = store.client(worker_id)
        self.scheduler = scheduler
        self.clock = scheduler.clock
        self.cfg = config or WorkerConfig()
        self.spawn = spawn
        self.rng = random.Random(f"{seed}:{worker_id}")
        self.lifecycle = STARTING
        self.types: dict[str, TypeRuntime] = {}
        self.meter = FlowMeter(self.cfg.flow_window_ms)
        self.peers: dict[str, _Peer] = {}
        self.plan: RelocationPlan | None = None
        self.incoming: dict[str, HandoverSession] = {}
        self.incoming_plan: str | None = None
        self.incoming_source: str | None = None
        self.busy_until = 0.0
        self.counters: Counter = Counter()
        self.started_at = 0
        self.crashed = False
        self._forced: list[str] | None = None
        # the F peers last heard from us; leader election compares like with like
        self._published_flow = 0.0
        self._current: Message | None = None
        self._timers: list = []
        self._plans = itertools.count(1)
        self._ctl_subs: list[Subscription] = []

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        if self.lifecycle != STARTING:
            raise RuntimeError(f"{self.id} already started")
        self.started_at = self.clock.now
        for topic, fn in (
            (HEARTBEAT_TOPIC, self._on_heartbeat),
            (LOADS_TOPIC, self._on_loads),
            (ASSIGN_TOPIC, self._on_assign_request),
            (inbox(self.id), self._on_inbox),
        ):
            self._ctl_subs.append(
                self.bus.subscribe(topic, self.id, self._wrap(fn), owner=self.id)
            )
        self.lifecycle = ACTIVE
        self._heartbeat()
        self._timers.append(self.scheduler.call_every(self.cfg.heartbeat_ms, self._heartbeat))
        self._timers.append(
            self.scheduler.call_every(self.cfg.relocation.monitor_period_ms, self._monitor)
        )

    def crash(self) -> None:
        """Stop dead: no goodbye, durable subscriptions are left orphaned."""
        self.crashed = True
        for t in self._timers:
            t.cancel()
        self.bus.disconnect(self.id)
        self.lifecycle = TERMINATED

    def _terminate(self) -> None:
        log.info("%s terminating at %d", self.id, self.clock.now)
        for rt in list(self.types.values()):
            self._drop_type(rt.name)
        self.lifecycle = TERMINATED
        self._heartbeat()
        for t in self._timers:
            t.cancel()
        self.bus.disconnect(self.id)

    @property
    def alive(self) -> bool:
        return self.lifecycle in (STARTING, ACTIVE, DRAINING)

    # -- bus plumbing ----------------------------------------------------------

    def _wrap(self, fn: Callable[[Message], None]) -> Callable[[Message], None]:
        def handler(msg: Message) -> None:
            if not self.alive:
                return
            prev, self._current = self._current, msg
            try:
                fn(msg)
            finally:
                self._current = prev

        return handler

    def _send(self, topic: str, payload: dict) -> None:
        self.bus.publish(topic, payload, publisher=self.id, parent=self._current)

    # -- views -----------------------------------------------------------------

    @property
    def input_event_types(self) -> set[str]:
        return {i for rt in self.types.values() for i in rt.definition.inputs}

    def owned(self) -> list[str]:
        """Types this worker is the detector of record for."""
        return sorted(n for n, rt in self.types.items() if n not in self.incoming)

    def type_flow(self, name: str) -> float:
        return self.meter.total(self.types[name].definition.inputs)

    def flow(self) -> float:
        return self.meter.total(self.input_event_types)

    def consumption(self, name: str) -> float:
        return event_type_consumption(
            self.types[name].state, self.cfg.per_event_cost, self.cfg.type_overhead
        )

    def instance_consumption(self) -> float:
        return sum(self.consumption(n) for n in self.types)

    def view(self) -> InstanceView:
        names = self.owned()
        return InstanceView(
            event_types={n: self.types[n].definition.inputs for n in names},
            flows={n: self.type_flow(n) for n in names},
            F=self.flow(),
            IC=self.instance_consumption(),
        )

    @property
    def busy(self) -> bool:
        return self.plan is not None or bool(self.incoming)

    def snapshot(self) -> WorkerLoadSnapshot:
        return WorkerLoadSnapshot(
            worker_id=self.id,
            F=self.flow(),
            IC=self.instance_consumption(),
            n_types=len(self.types),
            timestamp=self.clock.now,
            lifecycle=self.lifecycle,
            busy=self.busy,
        )

    def _snapshot_fields(self) -> dict:
        s = self.snapshot()
        return {
            "worker_id": s.worker_id,
            "F": s.F,
            "IC": s.IC,
            "n_types": s.n_types,
            "timestamp": s.timestamp,
            "lifecycle": s.lifecycle,
            "busy": s.busy,
        }

    def _peer_alive(self, wid: str) -> bool:
        p = self.peers.get(wid)
        if p is None or p.lifecycle == TERMINATED:
            return False
        return self.clock.now - p.last_heartbeat <= MISSED_HEARTBEATS * self.cfg.heartbeat_ms

    def alive_workers(self) -> int:
        return 1 + sum(1 for w in self.peers if w != self.id and self._peer_alive(w))

    # -- heartbeats ------------------------------------------------------------

    def _heartbeat(self) -> None:
        if self.crashed:
            return
        f = self._snapshot_fields()
        del f["timestamp"]
        self._published_flow = f["F"]
        self.bus.publish(
            HEARTBEAT_TOPIC, make("heartbeat", time=self.clock.now, **f), publisher=self.id
        )

    def _on_heartbeat(self, msg: Message) -> None:
        hb = msg.payload
        wid = hb["worker_id"]
        if wid == self.id:
            return
        p = self.peers.get(wid)
        if p is None:
            p = self.peers[wid] = _Peer(self.clock.now, hb["lifecycle"])
        p.last_heartbeat = self.clock.now
        p.lifecycle = hb["lifecycle"]
        p.F, p.IC, p.n_types, p.busy = hb["F"], hb["IC"], hb["n_types"], hb["busy"]

    # -- data path -------------------------------------------------------------

    def _subscribe_inputs(self, rt: TypeRuntime, durable: bool) -> None:
        for topic in rt.definition.inputs:
            if topic in rt.subs:
                continue
            rt.subs[topic] = self.bus.subscribe(
                topic,
                f"{self.id}:{rt.name}",
                self._wrap(lambda m, name=rt.name: self._on_input(name, m)),
                owner=self.id,
                durable=durable,
                auto_ack=False,
            )

    def _on_input(self, name: str, msg: Message) -> None:
        rt = self.types.get(name)
        if rt is None:
            return
        self.meter.count(msg.topic, msg.payload.event_id)
        if rt.mode == "buffering":
            rt.buffer.append(msg)
            return
        self._process(rt, msg)

    def _process(self, rt: TypeRuntime, msg: Message) -> None:
        """``process_event`` for one (type, input) pair."""
        e = msg.payload
        state = rt.state
        if state.seen(e.event_id):
            self.counters["duplicates"] += 1
            return
        start = max(float(self.clock.now), float(msg.publish_time), self.busy_until)
        finish = start + self.cfg.service_ms
        self.busy_until = finish
        try:
            outs, _ = evaluate(rt.definition, e, state)
        except EvaluationError as exc:
            self.counters["errors"] += 1
            rt.stats.errors += 1
            log.debug("%s: %s skipped for %s: %s", self.id, e.event_id, rt.name, exc)
            outs = []
        state.mark_seen(e.event_id)
        rt.last_input_id = e.event_id
        rt.stats.processed += 1
        session = self.plan.sessions.get(rt.name) if self.plan is not None else None
        for i, out in enumerate(outs):
            self.bus.publish(
                rt.name, out, publisher=self.id, parent=msg, label=(rt.name, i), publish_time=finish
            )
            if rt.notify:
                self.bus.publish(
                    DETECTIONS_TOPIC,
                    make("detection", event_type=rt.name, event=out),
                    publisher=self.id,
                    parent=msg,
                    publish_time=finish,
                )
            if session is not None and not session.phase.terminal:
                session.own_outputs.append(out.event_id)
        self.counters["detections"] += len(outs)
        if session is not None and not session.phase.terminal:
            session.history[e.event_id] = state.buffered_count
            self._compare(session)
        rt.since_checkpoint += 1
        if rt.since_checkpoint >= self.cfg.checkpoint_every and rt.name not in self.incoming:
            self._checkpoint(rt)

    def _checkpoint(self, rt: TypeRuntime) -> int | None:
        try:
            version = self.store.checkpoint_context(rt.name, rt.state)
        except StoreUnavailable:
            self.counters["checkpoint_failures"] += 1
            return None
        for sub in rt.subs.values():
            sub.ack()
        rt.since_checkpoint = 0
        self.counters["checkpoints"] += 1
        return version

    def _add_type(
        self,
        defn: EventTypeDefinition,
        version: int,
        notify: bool,
        mode: str = "active",
        state: ContextState | None = None,
    ) -> TypeRuntime:
        rt = TypeRuntime(
            definition=defn,
            state=state if state is not None else new_state(defn),
            version=version,
            notify=notify,
            mode=mode,
            stats=EventTypeRuntimeStats(defn.name),
        )
        self.types[defn.name] = rt
        return rt

    def _drop_type(self, name: str) -> None:
        rt = self.types.pop(name, None)
        if rt is None:
            return
        for sub in rt.subs.values():
            self.bus.unsubscribe(sub)
        still_used = self.input_event_types
        for topic in rt.definition.inputs:
            if topic not in still_used:
                self.meter.forget(topic)

    # -- control inbox ---------------------------------------------------------

    def _on_inbox(self, msg: Message) -> None:
        try:
            payload = validate(msg.payload)
        except ProtocolError as exc:
            log.warning("%s: dropping malformed control message: %s", self.id, exc)
            self.counters["bad_control"] += 1
            return
        handler = {
            "load_snapshot": self._on_load_snapshot,
            "relocation_proposal": self._on_proposal,
            "proposal_response": self._on_proposal_response,
            "handover_phase": self._on_phase,
            "assign": self._on_assign,
            "definition_update": self._on_definition_update,
            "unassign": self._on_unassign,
        }.get(payload["kind"])
        if handler is not None:
            handler(payload)

    def _on_loads(self, msg: Message) -> None:
        req = msg.payload
        if req.get("kind") != "snapshot_request" or req["requester"] == self.id:
            return
        if self.lifecycle != ACTIVE:
            return
        self._send(
            inbox(req["requester"]),
            make("load_snapshot", request_id=req["request_id"], **self._snapshot_fields()),
        )

    def _on_assign_request(self, msg: Message) -> None:
        req = msg.payload
        if req.get("kind") != "assignment_request" or self.lifecycle != ACTIVE:
            return
        self._send(
            inbox(CATALOG_ID),
            make("load_snapshot", request_id=req["request_id"], **self._snapshot_fields()),
        )

    # -- assignments from the catalog -------------------------------------------

    def _on_assign(self, m: dict) -> None:
        name = m["event_type"]
        existing = self.types.get(name)
        if existing is not None and name not in self.incoming and existing.version >= m["version"]:
            return  # duplicate
        if name in self.incoming:
            self._abort_incoming(name, "superseded by catalog assignment")
        elif existing is not None:
            self._drop_type(name)
        defn = EventTypeDefinition.from_dict(m["definition"])
        state = None
        if m.get("adopt_from") is not None or m.get("checkpoint_version") is not None:
            try:
                state = self.store.load_context(name)
            except StoreUnavailable:
                self.counters["store_errors"] += 1
            if state is not None and state.owner_type != name:
                state = None
        rt = self._add_type(defn, m["version"], m.get("notify", False), state=state)
        orphan = m.get("orphan_subscriber")
        for topic in defn.inputs:
            sub = None
            if orphan:
                sub = self.bus.takeover(
                    topic,
                    orphan,
                    f"{self.id}:{name}",
                    self._wrap(lambda msg, n=name: self._on_input(n, msg)),
                    owner=self.id,
                )
            if sub is not None:
                rt.subs[topic] = sub
        self._subscribe_inputs(rt, durable=True)
        self.counters["assigned"] += 1
        self._send(
            ASSIGNMENTS_TOPIC,
            make("assignment_update", event_type=name, worker_id=self.id, version=m["version"], reason="assigned"),
        )

    def _on_definition_update(self, m: dict) -> None:
        rt = self.types.get(m["event_type"])
        if rt is None:
            return
        defn = EventTypeDefinition.from_dict(m["definition"])
        old = rt.definition
        rt.notify = m.get("notify", rt.notify)
        if defn == old:
            return
        keep_state = (defn.operator, defn.context, defn.inputs) == (old.operator, old.context, old.inputs)
        for topic in list(rt.subs):
            if topic not in defn.inputs:
                self.bus.unsubscribe(rt.subs.pop(topic))
        rt.definition = defn
        if not keep_state:
            seen = rt.state.recent_inputs
            rt.state = new_state(defn)
            for eid in seen:
                rt.state.mark_seen(eid)
        self._subscribe_inputs(rt, durable=True)

    def _on_unassign(self, m: dict) -> None:
        self._drop_type(m["event_type"])

    # -- monitoring ----------------------------------------------------------------

    def request_relocation(self, types: list[str] | None = None) -> None:
        """Ask for a handover of ``types`` (default: one owned type) at the next tick."""
        self._forced = list(types) if types is not None else []

    def _monitor(self) -> None:
        if not self.alive:
            return
        period = self.cfg.relocation.monitor_period_ms
        self.meter.sample(period)
        for name, rt in self.types.items():
            rt.stats.flow = self.type_flow(name)
            rt.stats.consumption = self.consumption(name)
        self._check_sessions()
        if self.plan is not None:
            self._advance_plan()
            return
        if self.incoming or self.lifecycle != ACTIVE:
            return
        owned = self.owned()
        if not owned:
            idle_for = self.clock.now - self.started_at
            if (
                self._forced is None
                and self.alive_workers() >= 2
                and idle_for >= self.cfg.idle_grace_periods * period
            ):
                self._terminate()
            return
        if self._forced is not None:
            chosen = [t for t in self._forced if t in owned] or owned[:1]
            self._forced = None
            self._start_plan("relocate", chosen)
            return
        action = monitor_tick(
            self.view(),
            self.cfg.relocation,
            self.alive_workers(),
            self.rng,
            contexts=self._load_contexts,
            per_event_cost=self.cfg.per_event_cost,
            overhead=self.cfg.type_overhead,
        )
        if action.kind == "initiate_relocation":
            self._start_plan("relocate", action.types)
        elif (
            action.kind == "initiate_scale_in"
            # the flow average starts at zero; wait one window before trusting it
            and self.clock.now - self.started_at >= self.cfg.flow_window_ms
            and self._leads_scale_in()
        ):
            self._start_plan("scale_in", action.types)

    def _load_contexts(self) -> dict[str, ContextState | None]:
        out: dict[str, ContextState | None] = {}
        for name in self.owned():
            try:
                out[name] = self.store.load_context(name)
            except StoreUnavailable:
                out[name] = None
        return out

    def _leads_scale_in(self) -> bool:
        """Only the least-loaded underloaded worker drains, so two never drain into each other."""
        me = (self._published_flow, self.id)
        for wid, p in self.peers.items():
            if not self._peer_alive(wid) or p.lifecycle != ACTIVE or p.n_types == 0:
                continue
            if p.busy:
                return False
            if p.F < self.cfg.relocation.min_flow and (p.F, wid) < me:
                return False
        return True

    # -- source side ------------------------------------------------------------------

    def _metric(self) -> tuple[str, float]:
        r = self.cfg.relocation
        if r.strategy == "input_similarity":
            return "F", r.max_flow
        return "IC", r.max_resource

    def _need(self, types: list[str]) -> float:
        metric, _ = self._metric()
        if metric == "F":
            return self.meter.total(i for t in types for i in self.types[t].definition.inputs)
        return sum(self.consumption(t) for t in types)

    def _start_plan(self, purpose: str, types: list[str]) -> None:
        now = self.clock.now
        plan = RelocationPlan(
            plan_id=f"{self.id}-p{next(self._plans)}",
            purpose=purpose,
            types=list(types),
            need=self._need(types),
            started_at=now,
            deadline=now + self.cfg.relocation.monitor_period_ms,
        )
        self.plan = plan
        if purpose == "scale_in":
            self.lifecycle = DRAINING
        self.counters[f"plans_{purpose}"] += 1
        log.info("%s: %s plan %s for %s", self.id, purpose, plan.plan_id, plan.types)
        self._send(LOADS_TOPIC, make("snapshot_request", request_id=plan.plan_id, requester=self.id))

    def _on_load_snapshot(self, m: dict) -> None:
        plan = self.plan
        if plan is None or m["request_id"] != plan.plan_id or plan.state != "collecting":
            return
        plan.replies[m["worker_id"]] = WorkerLoadSnapshot.from_message(m)

    def _candidates(self, plan: RelocationPlan) -> str | None:
        metric, limit = self._metric()
        fresh = [
            s
            for w, s in sorted(plan.replies.items())
            if w not in plan.refused and s.lifecycle == ACTIVE and not s.busy and self._peer_alive(w)
        ]
        return choose_target_worker(
            fresh,
            plan.need,
            limit,
            metric,
            now=self.clock.now,
            max_age_ms=2 * self.cfg.relocation.monitor_period_ms,
        )

    def _advance_plan(self) -> None:
        plan = self.plan
        now = self.clock.now
        if plan.state == "collecting" and now >= plan.deadline:
            self._pick_and_propose(plan)
        elif plan.state == "proposing" and now >= plan.deadline:
            plan.refused.add(plan.target)
            self._after_refusal(plan)

    def _pick_and_propose(self, plan: RelocationPlan) -> None:
        target = self._candidates(plan)
        if target is None:
            self._scale_out_or_give_up(plan)
        else:
            self._propose(plan, target)

    def _scale_out_or_give_up(self, plan: RelocationPlan) -> None:
        if plan.purpose == "scale_in":
            self._end_plan("no capacity for scale-in")
            return
        new = self._scale_out()
        if new is None:
            self.counters["deferred"] += 1
            self._end_plan("scale-out deferred")
            return
        self._propose(plan, new)

    def _scale_out(self) -> str | None:
        if self.spawn is None:
            return None
        wid = self.spawn()
        if wid is not None:
            self.counters["scale_outs"] += 1
            # a fresh worker's first heartbeat may not have reached us yet
            self.peers.setdefault(wid, _Peer(self.clock.now, ACTIVE))
        return wid

    def _propose(self, plan: RelocationPlan, target: str) -> None:
        plan.state = "proposing"
        plan.target = target
        plan.deadline = self.clock.now + self.cfg.handover_timeout_ms
        types = []
        for name in plan.types:
            rt = self.types[name]
            types.append(
                {
                    "name": name,
                    "definition": rt.definition.to_dict(),
                    "version": rt.version,
                    "notify": rt.notify,
                    "topic_rates": {t: self.meter.rate(t) for t in rt.definition.inputs},
                }
            )
        self._send(
            inbox(target),
            make(
                "relocation_proposal",
                session_id=plan.plan_id,
                source=self.id,
                target=target,
                purpose=plan.purpose,
                types=types,
                need=plan.need,
            ),
        )

    def _on_proposal_response(self, m: dict) -> None:
        plan = self.plan
        if plan is None or m["session_id"] != plan.plan_id or plan.state != "proposing":
            return
        if m["target"] != plan.target:
            return
        if not m["accepted"]:
            self.counters["refusals"] += 1
            plan.refused.add(m["target"])
            self._after_refusal(plan)
            return
        self._begin_handover(plan)

    def _after_refusal(self, plan: RelocationPlan) -> None:
        plan.retries += 1
        plan.state = "collecting"
        target = self._candidates(plan) if plan.retries <= 1 else None
        if target is not None:
            self._propose(plan, target)
        else:
            self._scale_out_or_give_up(plan)

    def _begin_handover(self, plan: RelocationPlan) -> None:
        plan.state = "handover"
        now = self.clock.now
        for name in plan.types:
            rt = self.types[name]
            s = HandoverSession(
                session_id=plan.plan_id,
                event_type=name,
                source_worker=self.id,
                target_worker=plan.target,
                comparison_window=self.cfg.comparison_window,
                started_at=now,
            )
            plan.sessions[name] = s
            version = self._checkpoint(rt)
            if version is None:
                s.abort("state store unavailable")
                self._phase_msg(s, Phase.ABORTED)
                continue
            s.checkpoint_version = version
            s.checkpoint_count = rt.state.buffered_count
            s.advance(Phase.STATE_TRANSFERRED)
            watch_id = f"{self.id}:watch"
            if self.bus.subscription(name, watch_id) is None:
                self.bus.subscribe(
                    name, watch_id, self._wrap(self._on_watch), owner=self.id
                )
            self._phase_msg(
                s,
                Phase.STATE_TRANSFERRED,
                checkpoint_version=version,
                buffered_count=s.checkpoint_count,
                comparison_window=s.comparison_window,
            )
        self._maybe_finish_plan()

    def _phase_msg(self, s: HandoverSession, phase: Phase, to: str | None = None, **extra) -> None:
        if to is None:
            to = s.target_worker if s.source_worker == self.id else s.source_worker
        dest = to
        self._send(
            inbox(dest),
            make(
                "handover_phase",
                session_id=s.session_id,
                event_type=s.event_type,
                phase=phase.value,
                source=s.source_worker,
                target=s.target_worker,
                **extra,
            ),
        )

    def _on_watch(self, msg: Message) -> None:
        plan = self.plan
        if plan is None:
            return
        s = plan.sessions.get(msg.topic)
        if s is None or s.phase.terminal or msg.publisher != s.target_worker:
            return
        s.target_outputs.append(msg.payload.event_id)
        self._compare(s)

    def _compare(self, s: HandoverSession) -> None:
        if s.phase is not Phase.DUAL_DETECTION:
            return
        verdict = s.compare()
        if verdict is False:
            self._abort_session(s, "outputs differ")
        elif verdict is True:
            self._acknowledge(s)

    def _on_source_phase(self, m: dict) -> None:
        plan = self.plan
        if plan is None or m["session_id"] != plan.plan_id:
            return
        s = plan.sessions.get(m["event_type"])
        if s is None or s.phase.terminal:
            return
        phase = Phase(m["phase"])
        if phase is Phase.ABORTED:
            s.abort(m.get("reason") or "aborted by target")
            self.counters["aborted"] += 1
            self._maybe_finish_plan()
            return
        if phase is not Phase.DUAL_DETECTION or s.phase is not Phase.STATE_TRANSFERRED:
            return
        last = m.get("last_input_id")
        expected = s.history.get(last) if last is not None else s.checkpoint_count
        if expected is None or expected != m.get("buffered_count"):
            self._abort_session(s, f"buffered_count mismatch ({expected} != {m.get('buffered_count')})")
            return
        s.advance(Phase.DUAL_DETECTION)
        self._compare(s)
        if s.comparison_window == 0 and s.phase is Phase.DUAL_DETECTION:
            self._acknowledge(s)

    def _acknowledge(self, s: HandoverSession) -> None:
        s.advance(Phase.ACKNOWLEDGED)
        rt = self.types[s.event_type]
        version = rt.version + 1
        self._drop_type(s.event_type)
        plan = self.plan
        self._send(
            ASSIGNMENTS_TOPIC,
            make(
                "assignment_update",
                event_type=s.event_type,
                worker_id=s.target_worker,
                version=version,
                reason=plan.purpose if plan is not None else "relocate",
            ),
        )
        self._phase_msg(s, Phase.COMPLETED, version=version)
        s.advance(Phase.COMPLETED)
        self.counters["relocations"] += 1
        self._maybe_finish_plan()

    def _abort_session(self, s: HandoverSession, reason: str) -> None:
        log.info("%s: handover of %s aborted: %s", self.id, s.event_type, reason)
        s.abort(reason)
        self.counters["aborted"] += 1
        self._phase_msg(s, Phase.ABORTED, reason=reason)
        self._maybe_finish_plan()

    def _maybe_finish_plan(self) -> None:
        plan = self.plan
        if plan is None or plan.state != "handover":
            return
        if not all(s.phase.terminal for s in plan.sessions.values()):
            return
        watch = f"{self.id}:watch"
        for name in plan.sessions:
            sub = self.bus.subscription(name, watch)
            if sub is not None:
                self.bus.unsubscribe(sub)
        self.plan = None
        if plan.purpose == "scale_in":
            if not self.owned():
                self._terminate()
            else:
                self.lifecycle = ACTIVE

    def _end_plan(self, reason: str) -> None:
        log.info("%s: plan %s ended: %s", self.id, self.plan.plan_id, reason)
        if self.plan.purpose == "scale_in":
            self.lifecycle = ACTIVE
        self.plan = None

    def _check_sessions(self) -> None:
        now = self.clock.now
        timeout = self.cfg.handover_timeout_ms
        plan = self.plan
        if plan is not None and plan.state == "handover":
            for s in list(plan.sessions.values()):
                if s.phase.terminal:
                    continue
                if not self._peer_alive(s.target_worker) and now - s.started_at > MISSED_HEARTBEATS * self.cfg.heartbeat_ms:
                    self._abort_session(s, "target lost")
                elif now - s.started_at > timeout:
                    self._abort_session(s, "timeout")
        if self.incoming:
            src = self.incoming_source
            for name, s in list(self.incoming.items()):
                lost = not self._peer_alive(src) and now - s.started_at > MISSED_HEARTBEATS * self.cfg.heartbeat_ms
                if lost or now - s.started_at > 2 * timeout:
                    self._abort_incoming(name, "source lost" if lost else "timeout")

    # -- target side ----------------------------------------------------------------------

    def _on_phase(self, m: dict) -> None:
        if m["source"] == self.id:
            self._on_source_phase(m)
        else:
            self._on_target_phase(m)

    def _capacity_ok(self, need: float) -> bool:
        if not self.types:
            return True  # fresh workers always accept
        metric, limit = self._metric()
        current = self.flow() if metric == "F" else self.instance_consumption()
        return current + need < limit

    def _on_proposal(self, m: dict) -> None:
        plan = self.plan
        if (
            m.get("purpose") == "scale_in"
            and plan is not None
            and plan.purpose == "scale_in"
            and plan.state != "handover"
            and m["source"] < self.id
        ):
            # two workers started draining at once; the smaller id wins
            self._end_plan(f"yielding to {m['source']}")
        reason = None
        if self.lifecycle != ACTIVE:
            reason = f"lifecycle {self.lifecycle}"
        elif self.busy:
            reason = "busy"
        elif not self._capacity_ok(m.get("need", 0.0)):
            reason = "no capacity"
        elif any(t["name"] in self.types for t in m["types"]):
            reason = "type already present"
        if reason is not None:
            self._send(
                inbox(m["source"]),
                make("proposal_response", session_id=m["session_id"], target=self.id, accepted=False, reason=reason),
            )
            return
        now = self.clock.now
        self.incoming_plan = m["session_id"]
        self.incoming_source = m["source"]
        self.peers.setdefault(m["source"], _Peer(now, ACTIVE))
        for t in m["types"]:
            defn = EventTypeDefinition.from_dict(t["definition"])
            rt = self._add_type(defn, t["version"], t.get("notify", False), mode="buffering")
            self._subscribe_inputs(rt, durable=False)
            for topic, rate in t.get("topic_rates", {}).items():
                self.meter.seed(topic, rate)
            self.incoming[defn.name] = HandoverSession(
                session_id=m["session_id"],
                event_type=defn.name,
                source_worker=m["source"],
                target_worker=self.id,
                comparison_window=self.cfg.comparison_window,
                started_at=now,
            )
        self._send(
            inbox(m["source"]),
            make("proposal_response", session_id=m["session_id"], target=self.id, accepted=True, reason=None),
        )

    def _on_target_phase(self, m: dict) -> None:
        name = m["event_type"]
        s = self.incoming.get(name)
        if s is None or m["session_id"] != s.session_id:
            return
        phase = Phase(m["phase"])
        if phase is Phase.STATE_TRANSFERRED and s.phase is Phase.PROPOSED:
            s.checkpoint_version = m.get("checkpoint_version")
            s.advance(Phase.STATE_TRANSFERRED)
            self._load_transferred(name)
        elif phase is Phase.COMPLETED and s.phase is Phase.DUAL_DETECTION:
            s.advance(Phase.ACKNOWLEDGED)
            s.advance(Phase.COMPLETED)
            rt = self.types[name]
            rt.version = m.get("version", rt.version + 1)
            for sub in rt.subs.values():
                sub.durable = True
            del self.incoming[name]
            self._checkpoint(rt)
            self.counters["adopted"] += 1
            self._clear_incoming_if_done()
        elif phase is Phase.ABORTED:
            self._abort_incoming(name, m.get("reason") or "aborted by source", notify=False)

    def _load_transferred(self, name: str) -> None:
        s = self.incoming.get(name)
        rt = self.types.get(name)
        if s is None or rt is None or s.phase is not Phase.STATE_TRANSFERRED:
            return
        try:
            got = self.store.load_context_versioned(name)
        except StoreUnavailable:
            self._abort_incoming(name, "state store unavailable")
            return
        if got is None or (s.checkpoint_version is not None and got[1] < s.checkpoint_version):
            # replica not caught up yet
            self.scheduler.call_later(STATE_RETRY_MS, self._wrap_timer(lambda: self._load_transferred(name)))
            return
        rt.state = got[0]
        rt.mode = "active"
        buffered, rt.buffer = rt.buffer, []
        rt.last_input_id = None
        for msg in buffered:
            self._process(rt, msg)
        s.advance(Phase.DUAL_DETECTION)
        self._phase_msg(
            s,
            Phase.DUAL_DETECTION,
            last_input_id=rt.last_input_id,
            buffered_count=rt.state.buffered_count,
        )

    def _wrap_timer(self, fn: Callable[[], None]) -> Callable[[], None]:
        def run() -> None:
            if self.alive:
                fn()

        return run

    def _abort_incoming(self, name: str, reason: str, notify: bool = True) -> None:
        s = self.incoming.pop(name, None)
        if s is None:
            return
        log.info("%s: incoming handover of %s aborted: %s", self.id, name, reason)
        if not s.phase.terminal:
            s.abort(reason)
        self._drop_type(name)
        self.counters["incoming_aborted"] += 1
        if notify:
            self._phase_msg(s, Phase.ABORTED, to=s.source_worker, reason=reason)
        self._clear_incoming_if_done()

    def _clear_incoming_if_done(self) -> None:
        if not self.incoming:
            self.incoming_plan = None
            self.incoming_source = None
