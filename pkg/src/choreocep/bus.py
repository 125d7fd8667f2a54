"""In-process publish/subscribe broker.

Every published message gets a *causal key*: a root message (published
outside any handler) gets a fresh root counter, and a message published while
handling another one extends the parent's key with a child label. Deliveries
are made in key order. Because a derived event's label is
``(event type, emission ordinal)`` and not the identity of whichever worker
emitted it, the delivery order seen by every subscriber is the same no matter
how event types are spread across workers. That is what makes a single-worker
reference run and a multi-worker run directly comparable.

Subscriptions created with ``auto_ack=False`` keep delivered messages until
they are acknowledged. A durable subscription whose owner disconnects keeps
accumulating messages, and ``takeover`` hands the backlog, unacknowledged
messages included, to a new consumer. This is the at-least-once half of the
delivery contract; consumers deduplicate by event id.
"""

from __future__ import annotations

import heapq
import itertools
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

CONTROL_PREFIX = "ctl."
_CTL_LABEL = "\uffff"


class BusError(Exception):
    pass


class BusStopped(BusError):
    """Publish attempted on a stopped broker."""


class SubscriptionError(BusError):
    pass


def is_control_topic(topic: str) -> bool:
    return topic.startswith(CONTROL_PREFIX)


@dataclass(slots=True)
class Message:
    topic: str
    payload: Any
    publisher: str
    seq: int
    key: tuple
    publish_time: int
    redelivered: bool = False


@dataclass
class Faults:
    """Delivery faults applied per (message, subscriber).

    ``scope`` selects which topics are affected: ``"data"`` (default),
    ``"control"`` or ``"all"``.
    """

    drop: float = 0.0
    duplicate: float = 0.0
    delay_ms: int = 0
    scope: str = "data"

    def applies(self, topic: str) -> bool:
        if self.scope == "all":
            return True
        return is_control_topic(topic) == (self.scope == "control")

    @property
    def active(self) -> bool:
        return self.drop > 0 or self.duplicate > 0 or self.delay_ms > 0


@dataclass(eq=False)
class Subscription:
    topic: str
    subscriber_id: str
    handler: Callable[[Message], None] | None = None
    owner: str | None = None
    durable: bool = False
    auto_ack: bool = True
    order: int = 0
    queue: deque = field(default_factory=deque)
    unacked: list = field(default_factory=list)
    active: bool = True
    delivered: int = 0

    def poll(self) -> Message | None:
        """Take the next queued message (only for handler-less subscriptions)."""
        if not self.queue:
            return None
        msg = self.queue.popleft()
        if not self.auto_ack:
            self.unacked.append(msg)
        return msg

    def drain(self) -> list[Message]:
        out = []
        while (msg := self.poll()) is not None:
            out.append(msg)
        return out

    def ack(self) -> int:
        """Acknowledge everything consumed so far; returns the count."""
        n = len(self.unacked)
        self.unacked.clear()
        return n


class InMemoryBus:
    def __init__(
        self,
        clock: Any = None,
        seed: int = 0,
        faults: Faults | None = None,
        tracer: Callable[[Message], None] | None = None,
    ) -> None:
        self.clock = clock
        self.faults = faults or Faults()
        self.tracer = tracer
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._subs: dict[str, dict[str, Subscription]] = {}
        self._heap: list = []
        self._delayed: list = []
        self._seq = itertools.count(1)
        self._roots = itertools.count(1)
        self._entries = itertools.count()
        self._orders = itertools.count()
        self._pumping = False
        self._stopped = False
        self.stats = {"published": 0, "delivered": 0, "dropped": 0, "duplicated": 0, "delayed": 0}

    def _now(self) -> int:
        return self.clock.now if self.clock is not None else 0

    # -- publishing ------------------------------------------------------

    def publish(
        self,
        topic: str,
        payload: Any,
        publisher: str = "",
        parent: Message | None = None,
        label: tuple[str, int] | None = None,
        publish_time: int | None = None,
    ) -> int:
        """Enqueue ``payload`` for every current subscriber of ``topic``.

        ``parent`` is the message being handled when this one is published;
        ``label`` names the child (defaults to an anonymous control label).
        Returns the message sequence number as the acknowledgement.
        """
        with self._lock:
            if self._stopped:
                raise BusStopped(f"cannot publish to {topic!r}: broker stopped")
            seq = next(self._seq)
            if parent is None:
                key: tuple = (("", next(self._roots)),)
            else:
                key = parent.key + ((label if label is not None else (_CTL_LABEL, seq)),)
            msg = Message(
                topic=topic,
                payload=payload,
                publisher=publisher,
                seq=seq,
                key=key,
                publish_time=self._now() if publish_time is None else publish_time,
            )
            self.stats["published"] += 1
            faults = self.faults if self.faults.active and self.faults.applies(topic) else None
            for sub in list(self._subs.get(topic, {}).values()):
                if faults is None:
                    self._push(sub, msg)
                    continue
                if faults.drop and self._rng.random() < faults.drop:
                    self.stats["dropped"] += 1
                    continue
                copies = 2 if faults.duplicate and self._rng.random() < faults.duplicate else 1
                self.stats["duplicated"] += copies - 1
                for _ in range(copies):
                    if faults.delay_ms:
                        self.stats["delayed"] += 1
                        due = self._now() + faults.delay_ms
                        heapq.heappush(self._delayed, (due, next(self._entries), sub, msg))
                    else:
                        self._push(sub, msg)
        if self.tracer is not None:
            self.tracer(msg)
        return seq

    def _push(self, sub: Subscription, msg: Message) -> None:
        if sub.handler is None:
            # polled or orphaned subscriptions queue directly
            sub.queue.append(msg)
            return
        heapq.heappush(self._heap, (msg.key, msg.seq, next(self._entries), sub, msg))

    # -- subscriptions ---------------------------------------------------

    def subscribe(
        self,
        topic: str,
        subscriber_id: str,
        handler: Callable[[Message], None] | None = None,
        owner: str | None = None,
        durable: bool = False,
        auto_ack: bool = True,
    ) -> Subscription:
        if not subscriber_id:
            raise SubscriptionError("subscriber_id must be non-empty")
        if not topic:
            raise SubscriptionError("topic must be non-empty")
        with self._lock:
            subs = self._subs.setdefault(topic, {})
            if subscriber_id in subs:
                raise SubscriptionError(f"{subscriber_id!r} already subscribed to {topic!r}")
            sub = Subscription(
                topic=topic,
                subscriber_id=subscriber_id,
                handler=handler,
                owner=owner,
                durable=durable,
                auto_ack=auto_ack,
                order=next(self._orders),
            )
            subs[subscriber_id] = sub
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, {})
            if subs.get(sub.subscriber_id) is sub:
                del subs[sub.subscriber_id]
            sub.active = False
            sub.queue.clear()
            sub.unacked.clear()

    def subscription(self, topic: str, subscriber_id: str) -> Subscription | None:
        return self._subs.get(topic, {}).get(subscriber_id)

    def subscribers(self, topic: str) -> list[str]:
        return list(self._subs.get(topic, {}))

    def topics(self) -> list[str]:
        return [t for t, subs in self._subs.items() if subs]

    def disconnect(self, owner: str) -> None:
        """Simulate a consumer crash: durable subscriptions are orphaned, others removed."""
        with self._lock:
            for subs in self._subs.values():
                for sub in list(subs.values()):
                    if sub.owner != owner:
                        continue
                    if sub.durable:
                        sub.handler = None
                        sub.owner = None
                    else:
                        self.unsubscribe(sub)

    def takeover(
        self,
        topic: str,
        subscriber_id: str,
        new_subscriber_id: str,
        handler: Callable[[Message], None],
        owner: str | None = None,
    ) -> Subscription | None:
        """Attach a new consumer to an orphaned durable subscription.

        Unacknowledged and queued messages are redelivered, in their original
        causal order, before anything newer. Returns None when there is no
        such orphan.
        """
        with self._lock:
            subs = self._subs.get(topic, {})
            sub = subs.get(subscriber_id)
            if sub is None or sub.handler is not None:
                return None
            if new_subscriber_id != subscriber_id:
                if new_subscriber_id in subs:
                    raise SubscriptionError(f"{new_subscriber_id!r} already subscribed to {topic!r}")
                del subs[subscriber_id]
                sub.subscriber_id = new_subscriber_id
                subs[new_subscriber_id] = sub
            backlog = sub.unacked + list(sub.queue)
            sub.unacked = []
            sub.queue.clear()
            sub.handler = handler
            sub.owner = owner
            for msg in backlog:
                msg.redelivered = True
                self._push(sub, msg)
            return sub

    # -- delivery --------------------------------------------------------

    def _release_delayed(self) -> None:
        now = self._now()
        while self._delayed and self._delayed[0][0] <= now:
            _, _, sub, msg = heapq.heappop(self._delayed)
            self._push(sub, msg)

    def pending(self) -> int:
        return len(self._heap)

    def pump(self, limit: int | None = None) -> int:
        """Deliver queued messages in causal order until none remain.

        Handlers run synchronously and may publish; their messages are
        delivered within the same pump. Re-entrant calls are no-ops.
        """
        if self._pumping:
            return 0
        self._pumping = True
        delivered = 0
        try:
            while True:
                with self._lock:
                    self._release_delayed()
                    if not self._heap or (limit is not None and delivered >= limit):
                        break
                    _, _, _, sub, msg = heapq.heappop(self._heap)
                    if not sub.active:
                        continue
                    handler = sub.handler
                    if handler is None:
                        sub.queue.append(msg)
                        continue
                    if not sub.auto_ack:
                        sub.unacked.append(msg)
                    sub.delivered += 1
                    self.stats["delivered"] += 1
                delivered += 1
                handler(msg)
        finally:
            self._pumping = False
        return delivered

    def stop(self) -> None:
        with self._lock:
            self._stopped = True

    @property
    def stopped(self) -> bool:
        return self._stopped
