"""The cataloger as a bus participant.

It watches heartbeats to detect failed workers, runs the assignment
exchange (request, load replies, pick the least-loaded worker), records
assignment updates the workers send after relocating a type, and turns
detection notices into web-hook calls. It takes no part in worker-to-worker
balancing: relocations are only reported to it afterwards.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from ..bus import InMemoryBus, Message
from ..clock import Scheduler
from ..events import Event
from ..protocol import (
    ASSIGNMENTS_TOPIC,
    CATALOG_ID,
    DETECTIONS_TOPIC,
    HEARTBEAT_TOPIC,
    inbox,
    make,
)
from .registry import Catalog, NotFoundError

log = logging.getLogger(__name__)

MISSED_HEARTBEATS = 3


@dataclass
class _PeerView:
    last_heartbeat: int
    lifecycle: str
    failed: bool = False


@dataclass
class _PendingRequest:
    request: dict
    expected: set[str]
    deadline: int
    replies: dict[str, dict] = field(default_factory=dict)


class CatalogService:
    def __init__(
        self,
        catalog: Catalog,
        bus: InMemoryBus,
        scheduler: Scheduler,
        heartbeat_ms: int = 1000,
        reply_window_ms: int = 1000,
        spawn: Callable[[], str | None] | None = None,
    ) -> None:
        self.catalog = catalog
        self.bus = bus
        self.scheduler = scheduler
        self.clock = scheduler.clock
        self.heartbeat_ms = heartbeat_ms
        self.reply_window_ms = reply_window_ms
        self.spawn = spawn
        self.workers: dict[str, _PeerView] = {}
        self.pending: dict[str, _PendingRequest] = {}
        self.failures: list[tuple[int, str]] = []
        self._current: Message | None = None
        self._seen_detections: set[str] = set()
        self._seen_order: deque[str] = deque()
        self.webhook_reports = 0
        catalog.publish = self._publish
        bus.subscribe(HEARTBEAT_TOPIC, CATALOG_ID, self._on_heartbeat, owner=CATALOG_ID)
        bus.subscribe(inbox(CATALOG_ID), CATALOG_ID, self._on_inbox, owner=CATALOG_ID)
        bus.subscribe(ASSIGNMENTS_TOPIC, CATALOG_ID, self._on_assignment_update, owner=CATALOG_ID)
        bus.subscribe(DETECTIONS_TOPIC, CATALOG_ID, self._on_detection, owner=CATALOG_ID)
        self._timer = scheduler.call_every(max(1, heartbeat_ms // 2), self.tick)

    # -- plumbing ----------------------------------------------------------

    def _publish(self, topic: str, payload: dict) -> None:
        if payload.get("kind") == "assignment_request":
            self._track(payload)
        self.bus.publish(topic, payload, publisher=CATALOG_ID, parent=self._current)

    def _handle(self, msg: Message, fn: Callable[[dict], None]) -> None:
        prev, self._current = self._current, msg
        try:
            fn(msg.payload)
        finally:
            self._current = prev

    def live_workers(self) -> list[str]:
        return sorted(
            w
            for w, v in self.workers.items()
            if not v.failed and v.lifecycle in ("STARTING", "ACTIVE")
        )

    # -- heartbeats and failure detection ------------------------------------

    def _on_heartbeat(self, msg: Message) -> None:
        hb = msg.payload
        view = self.workers.get(hb["worker_id"])
        if view is None:
            self.workers[hb["worker_id"]] = _PeerView(self.clock.now, hb["lifecycle"])
        else:
            view.last_heartbeat = self.clock.now
            view.lifecycle = hb["lifecycle"]
            view.failed = False

    def tick(self) -> None:
        now = self.clock.now
        limit = MISSED_HEARTBEATS * self.heartbeat_ms
        for wid in sorted(self.workers):
            view = self.workers[wid]
            if view.failed or view.lifecycle == "TERMINATED":
                continue
            if now - view.last_heartbeat > limit:
                view.failed = True
                self.failures.append((now, wid))
                log.info("worker %s declared failed at %d", wid, now)
                for p in self.pending.values():
                    p.expected.discard(wid)
                    p.replies.pop(wid, None)
                self.catalog.handle_worker_failure(wid)
        for rid in sorted(self.pending):
            p = self.pending.get(rid)
            if p is not None and (now >= p.deadline or self._complete(p)):
                self._decide(rid)

    # -- assignment exchange ---------------------------------------------------

    def _track(self, req: dict) -> None:
        rid = req["request_id"]
        if rid in self.pending:
            return
        self.pending[rid] = _PendingRequest(
            request=req,
            expected=set(self.live_workers()),
            deadline=self.clock.now + self.reply_window_ms,
        )

    @staticmethod
    def _complete(p: _PendingRequest) -> bool:
        return bool(p.replies) and p.expected <= set(p.replies)

    def _on_inbox(self, msg: Message) -> None:
        self._handle(msg, self._inbox)

    def _inbox(self, payload: dict) -> None:
        if payload.get("kind") != "load_snapshot":
            return
        rid = payload["request_id"]
        p = self.pending.get(rid)
        if p is None:
            return
        if payload["lifecycle"] in ("STARTING", "ACTIVE"):
            p.replies[payload["worker_id"]] = payload
        if self._complete(p):
            self._decide(rid)

    def _decide(self, rid: str) -> None:
        p = self.pending.pop(rid)
        req = p.request
        name = req["event_type"]
        rec = self.catalog.peek(name)
        if rec is None or rec.assignment_version != req["version"]:
            return  # superseded by a newer assignment
        candidates = [
            r for w, r in p.replies.items() if not self.workers.get(w, _PeerView(0, "")).failed
        ]
        if candidates:
            best = min(candidates, key=lambda r: (r["IC"], r["worker_id"]))
            target = best["worker_id"]
        else:
            target = self.spawn() if self.spawn is not None else None
            if target is None:
                # nobody to take it yet; ask again on the next tick
                p.deadline = self.clock.now + self.reply_window_ms
                p.expected = set(self.live_workers())
                self.pending[rid] = p
                return
            self.workers[target] = _PeerView(self.clock.now, "STARTING")
        version = req["version"] + 1
        self.catalog.record_assignment(name, target, version)
        self._publish(
            inbox(target),
            make(
                "assign",
                event_type=name,
                definition=req["definition"],
                version=version,
                notify=req.get("notify", False),
                adopt_from=req.get("failed_worker"),
                orphan_subscriber=req.get("orphan_subscriber"),
                checkpoint_version=req.get("checkpoint_version"),
            ),
        )

    def _on_assignment_update(self, msg: Message) -> None:
        u = msg.payload
        try:
            self.catalog.record_assignment(u["event_type"], u["worker_id"], u["version"])
        except NotFoundError:
            pass

    # -- web-hooks -------------------------------------------------------------

    def _on_detection(self, msg: Message) -> None:
        note = msg.payload
        ev = note["event"]
        if not isinstance(ev, Event):
            ev = Event.from_dict(ev)
        if ev.event_id in self._seen_detections:
            return
        self._seen_detections.add(ev.event_id)
        self._seen_order.append(ev.event_id)
        if len(self._seen_order) > 65536:
            self._seen_detections.discard(self._seen_order.popleft())
        rec = self.catalog.peek(note["event_type"])
        if rec is not None and rec.webhooks:
            self.catalog.dispatch_webhook(rec.name, ev)
            self.webhook_reports += 1

    def stop(self) -> None:
        self._timer.cancel()
        self.bus.disconnect(CATALOG_ID)

