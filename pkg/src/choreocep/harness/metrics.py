"""Per-second detection latency, throughput and cluster size."""

from __future__ import annotations

import bisect
import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

METRICS_HEADER = ("timestamp", "type", "p50", "p95", "p99", "throughput", "instances", "relocations")
ALL_TYPES = "*"


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile of ``values`` (``q`` in 0..100)."""
    if not values:
        raise ValueError("percentile of an empty sequence")
    if not 0 <= q <= 100:
        raise ValueError(f"q must be in [0, 100], got {q}")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class MetricsRecord:
    timestamp: int  # seconds since start
    type: str
    p50: float | None
    p95: float | None
    p99: float | None
    throughput: float
    instances: int
    relocations: int

    def row(self) -> list:
        def fmt(v):
            return "" if v is None else round(v, 3)

        return [self.timestamp, self.type, fmt(self.p50), fmt(self.p95), fmt(self.p99),
                self.throughput, self.instances, self.relocations]


def build_metrics(
    detections: Iterable[dict],
    instances: Sequence[tuple[int, int]],
    relocation_times: Sequence[int],
) -> list[MetricsRecord]:
    """One record per second per detected type, plus an all-types row per second.

    ``detections`` are trace records of derived events; only the first copy
    of each event id counts. ``instances`` holds ``(time_ms, live_workers)``
    samples and ``relocation_times`` the completion time of each relocation.
    Latency is publish time minus occurrence time, bucketed by publish time.
    """
    seen: set[str] = set()
    per: dict[tuple[int, str], list[float]] = defaultdict(list)
    for r in detections:
        if r["event_id"] in seen:
            continue
        seen.add(r["event_id"])
        sec = int(r["publish_time"] // 1000)
        lat = r["publish_time"] - r["occurrence_time"]
        per[(sec, r["topic"])].append(lat)
        per[(sec, ALL_TYPES)].append(lat)
    last_sec = max([s for s, _ in per] + [t // 1000 for t, _ in instances] + [0])
    live = _step_lookup(instances)
    relocs = sorted(relocation_times)
    out: list[MetricsRecord] = []
    k = 0
    for sec in range(last_sec + 1):
        end = (sec + 1) * 1000
        while k < len(relocs) and relocs[k] < end:
            k += 1
        n = live(end - 1)
        types = sorted({t for (s, t) in per if s == sec and t != ALL_TYPES}) + [ALL_TYPES]
        for t in types:
            lats = per.get((sec, t), [])
            if lats:
                p50, p95, p99 = (percentile(lats, q) for q in (50, 95, 99))
            else:
                p50 = p95 = p99 = None
            out.append(MetricsRecord(sec, t, p50, p95, p99, len(lats), n, k))
    return out


def _step_lookup(samples: Sequence[tuple[int, int]]):
    times = [t for t, _ in samples]
    values = [v for _, v in samples]

    def at(t: int) -> int:
        i = bisect.bisect_right(times, t)
        return values[i - 1] if i else (values[0] if values else 0)

    return at


def write_metrics_csv(records: Iterable[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
