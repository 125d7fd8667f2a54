"""Context partitioning and the transferable per-type state it produces."""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field

from .definitions import ContextSpec
from .errors import EvaluationError, MissingAttributeError
from .events import Event, EventFormatError

RECENT_INPUTS = 1024


class StateDecodeError(ValueError):
    """Serialized context state could not be decoded."""


def _attr(e: Event, name: str):
    try:
        return e.attributes[name]
    except KeyError:
        raise MissingAttributeError(name) from None


def partition_id(spec: ContextSpec, e: Event) -> str:
    """Map an event to the partition of ``spec`` it belongs to.

    Temporal contexts with a tumbling time window partition by window index;
    other temporal windows keep a single partition ``"*"``.
    """
    if spec.kind == "semantic":
        return str(_attr(e, spec.partition_key))
    if spec.kind == "spatial":
        g = spec.grid
        x, y = _attr(e, g.x), _attr(e, g.y)
        try:
            return f"{math.floor(x / g.cell)}:{math.floor(y / g.cell)}"
        except TypeError:
            raise EvaluationError(f"non-numeric coordinates ({x!r}, {y!r})") from None
    w = spec.window
    if w.mode == "tumbling" and not w.count_based:
        return str(e.occurrence_time // w.time_ms)
    return "*"


@dataclass
class ContextState:
    """Buffered events of one event type, grouped by partition.

    ``watermarks`` holds progress marks: for Aggregation the open window
    index (tumbling time windows) or the partition's highest occurrence
    time; for Composition and PatternDetection a single type-wide mark.
    ``recent_inputs`` remembers the ids of recently processed inputs so a
    worker can drop redelivered or dual-delivered events; it travels with the
    state during a handover.
    """

    owner_type: str
    partitions: dict[str, list[Event]] = field(default_factory=dict)
    watermarks: dict[str, int] = field(default_factory=dict)
    late_dropped: int = 0
    recent_inputs: deque = field(default_factory=lambda: deque(maxlen=RECENT_INPUTS))

    def __post_init__(self) -> None:
        if not isinstance(self.recent_inputs, deque) or self.recent_inputs.maxlen != RECENT_INPUTS:
            self.recent_inputs = deque(self.recent_inputs, maxlen=RECENT_INPUTS)
        self._seen = set(self.recent_inputs)

    @property
    def buffered_count(self) -> int:
        return sum(map(len, self.partitions.values()))

    def seen(self, event_id: str) -> bool:
        return event_id in self._seen

    def mark_seen(self, event_id: str) -> None:
        if len(self.recent_inputs) == RECENT_INPUTS:
            self._seen.discard(self.recent_inputs[0])
        self.recent_inputs.append(event_id)
        self._seen.add(event_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContextState):
            return NotImplemented
        return (
            self.owner_type == other.owner_type
            and self.partitions == other.partitions
            and self.watermarks == other.watermarks
            and self.late_dropped == other.late_dropped
            and list(self.recent_inputs) == list(other.recent_inputs)
        )

    def copy(self) -> ContextState:
        return ContextState(
            self.owner_type,
            {k: list(v) for k, v in self.partitions.items()},
            dict(self.watermarks),
            self.late_dropped,
            deque(self.recent_inputs, maxlen=RECENT_INPUTS),
        )


_PLAIN_KEY = re.compile(r"[\w:*.\-]*", re.ASCII)


def _key(pid: str) -> str:
    return f'"{pid}"' if _PLAIN_KEY.fullmatch(pid) else json.dumps(pid)


def serialize_state(state: ContextState) -> bytes:
    # assembled by hand so each buffered event reuses its cached encoding
    dumps = json.dumps
    parts = ",".join(
        f"{_key(pid)}:[{','.join(ev.to_json() for ev in buf)}]"
        for pid, buf in sorted(state.partitions.items())
    )
    head = dumps(
        {"owner_type": state.owner_type, "watermarks": state.watermarks, "late_dropped": state.late_dropped},
        sort_keys=True,
        separators=(",", ":"),
    )
    return (
        f'{head[:-1]},"partitions":{{{parts}}},"recent_inputs":{dumps(list(state.recent_inputs), separators=(",", ":"))}}}'
    ).encode()


def deserialize_state(data: bytes) -> ContextState:
    try:
        doc = json.loads(data)
        return ContextState(
            owner_type=doc["owner_type"],
            partitions={
                str(pid): [Event.from_dict(d) for d in buf]
                for pid, buf in doc["partitions"].items()
            },
            watermarks={str(k): int(v) for k, v in doc.get("watermarks", {}).items()},
            late_dropped=int(doc.get("late_dropped", 0)),
            recent_inputs=deque(doc.get("recent_inputs", []), maxlen=RECENT_INPUTS),
        )
    except (ValueError, KeyError, TypeError, AttributeError, EventFormatError) as exc:
        raise StateDecodeError(f"cannot decode context state: {exc}") from None
