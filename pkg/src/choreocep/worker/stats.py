"""Per-topic incoming flow, smoothed with an exponentially weighted average."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class EventTypeRuntimeStats:
    type_name: str
    flow: float = 0.0
    consumption: float = 0.0
    processed: int = 0
    errors: int = 0


class FlowMeter:
    """Events/second per input topic.

    Each monitor period the raw count is folded into the average with
    ``alpha = 1 - exp(-period / window)``, so a step change in rate is
    63% reflected after ``window`` ms. An event is counted once per topic
    even when several local types consume it.
    """

    def __init__(self, window_ms: int = 5000) -> None:
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        self.window_ms = window_ms
        self.rates: dict[str, float] = {}
        self._counts: dict[str, int] = {}
        self._last_id: dict[str, str] = {}

    def count(self, topic: str, event_id: str) -> None:
        if self._last_id.get(topic) == event_id:
            return
        self._last_id[topic] = event_id
        self._counts[topic] = self._counts.get(topic, 0) + 1

    def sample(self, period_ms: int) -> None:
        alpha = 1.0 - math.exp(-period_ms / self.window_ms)
        per_second = 1000.0 / period_ms
        for topic in set(self.rates) | set(self._counts):
            observed = self._counts.get(topic, 0) * per_second
            old = self.rates.get(topic, 0.0)
            self.rates[topic] = old + alpha * (observed - old)
        self._counts.clear()

    def seed(self, topic: str, rate: float) -> None:
        """Start a newly subscribed topic at a known rate (used after a relocation)."""
        self.rates[topic] = max(self.rates.get(topic, 0.0), rate)

    def forget(self, topic: str) -> None:
        self.rates.pop(topic, None)
        self._counts.pop(topic, None)
        self._last_id.pop(topic, None)

    def rate(self, topic: str) -> float:
        return self.rates.get(topic, 0.0)

    def total(self, topics) -> float:
        """Combined rate of ``topics``, each counted once."""
        return sum(self.rates.get(t, 0.0) for t in set(topics))
