"""Message traces and the detection diff between two runs.

A trace is a JSON-lines file. The first line is a header describing the
input stream; every other line is one bus message (``"record": "msg"``) or
a harness action such as a worker kill (``"record": "fault"``).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from ..bus import Message, is_control_topic
from ..events import Event

PRODUCER_ID = "producer"
# bulky payload fields left out of trace records
_OMIT = ("definition", "types", "event")


def input_digest(events: Iterable[Event]) -> tuple[str, int]:
    """Fingerprint of a producer stream: (sha256 over ids, times and attributes, count)."""
    h = hashlib.sha256()
    n = 0
    for e in events:
        h.update(e.to_json().encode())
        h.update(b"\n")
        n += 1
    return h.hexdigest(), n


class TraceRecorder:
    """Bus tracer that keeps one small record per published message."""

    def __init__(self, clock: Any) -> None:
        self.clock = clock
        self.header: dict[str, Any] = {"record": "header"}
        self.records: list[dict[str, Any]] = []

    def __call__(self, msg: Message) -> None:
        rec: dict[str, Any] = {
            "record": "msg",
            "seq": msg.seq,
            "time": self.clock.now,
            "topic": msg.topic,
            "publisher": msg.publisher,
        }
        if is_control_topic(msg.topic):
            p = msg.payload
            if isinstance(p, dict):
                rec.update({k: v for k, v in p.items() if k not in _OMIT})
                if "event" in p and hasattr(p["event"], "event_id"):
                    rec["event_id"] = p["event"].event_id
        else:
            e = msg.payload
            rec["event_id"] = e.event_id
            rec["occurrence_time"] = e.occurrence_time
            rec["publish_time"] = msg.publish_time
        self.records.append(rec)

    def note(self, **fields: Any) -> None:
        self.records.append({"record": "fault", "time": self.clock.now, **fields})

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class Trace:
    header: dict[str, Any]
    records: list[dict[str, Any]]

    @classmethod
    def load(cls, path: str | Path) -> Trace:
        header: dict[str, Any] = {}
        records = []
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise TraceFormatError(f"{path}:{n}: {exc}") from None
                if rec.get("record") == "header":
                    header = rec
                else:
                    records.append(rec)
        return cls(header, records)

    @classmethod
    def of(cls, source: Trace | TraceRecorder | str | Path) -> Trace:
        if isinstance(source, Trace):
            return source
        if isinstance(source, TraceRecorder):
            return cls(source.header, source.records)
        return cls.load(source)

    def detections(self) -> list[dict[str, Any]]:
        """Data messages emitted by workers (derived events), duplicates included."""
        return [
            r
            for r in self.records
            if r["record"] == "msg" and r["publisher"] != PRODUCER_ID and not is_control_topic(r["topic"])
        ]


class TraceFormatError(ValueError):
    pass


class InputMismatchError(ValueError):
    """The two traces were produced from different input streams."""


@dataclass
class DiffReport:
    only_a: set[str] = field(default_factory=set)
    only_b: set[str] = field(default_factory=set)
    count_deltas: dict[str, tuple[int, int]] = field(default_factory=dict)
    excluded: int = 0

    @property
    def empty(self) -> bool:
        return not self.only_a and not self.only_b and not self.count_deltas

    def summary(self) -> str:
        if self.empty:
            return f"equivalent detections (excluded {self.excluded})"
        lines = [f"{len(self.only_a)} only in a, {len(self.only_b)} only in b"]
        for t, (a, b) in sorted(self.count_deltas.items()):
            lines.append(f"  {t}: {a} vs {b} ({b - a:+d})")
        return "\n".join(lines)


def _dedup(trace: Trace, exclude: tuple[int, int] | None) -> tuple[dict[str, str], int]:
    ids: dict[str, str] = {}
    excluded: set[str] = set()
    for r in trace.detections():
        if exclude is not None and exclude[0] <= r["occurrence_time"] <= exclude[1]:
            excluded.add(r["event_id"])
            continue
        ids.setdefault(r["event_id"], r["topic"])
    return ids, len(excluded)


def replay_compare(
    trace_a: Trace | TraceRecorder | str | Path,
    trace_b: Trace | TraceRecorder | str | Path,
    exclude_occurrence: tuple[int, int] | None = None,
) -> DiffReport:
    """Symmetric difference of deduplicated detections, plus per-type count deltas.

    ``exclude_occurrence`` drops detections whose occurrence time falls in
    the closed interval from both sides (used to skip a failure-detection gap).
    Raises InputMismatchError when the input streams differ.
    """
    a, b = Trace.of(trace_a), Trace.of(trace_b)
    da, db = a.header.get("input_digest"), b.header.get("input_digest")
    if da is None or db is None:
        raise InputMismatchError("trace header lacks an input digest; cannot confirm identical inputs")
    if da != db:
        raise InputMismatchError(
            f"input streams differ ({a.header.get('input_events')} events, digest {da[:12]} vs "
            f"{b.header.get('input_events')} events, digest {db[:12]})"
        )
    ids_a, ex_a = _dedup(a, exclude_occurrence)
    ids_b, ex_b = _dedup(b, exclude_occurrence)
    report = DiffReport(
        only_a=set(ids_a) - set(ids_b),
        only_b=set(ids_b) - set(ids_a),
        excluded=max(ex_a, ex_b),
    )
    ca, cb = Counter(ids_a.values()), Counter(ids_b.values())
    for t in set(ca) | set(cb):
        if ca[t] != cb[t]:
            report.count_deltas[t] = (ca[t], cb[t])
    return report
