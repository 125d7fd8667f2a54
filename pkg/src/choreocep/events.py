"""Event model and its JSON-lines wire format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Union

Scalar = Union[int, float, str, bool]


class EventFormatError(ValueError):
    """Raised when a wire record cannot be decoded into an Event."""


@dataclass(frozen=True, slots=True)
class Event:
    """A typed, timestamped datum flowing through the system.

    ``attributes`` is treated as read-only once the event is built; every
    operator that changes attributes creates a new event.
    """

    event_type: str
    event_id: str
    occurrence_time: int
    attributes: Mapping[str, Scalar] = field(default_factory=dict)
    source_id: str = ""
    # cached wire encoding; events are immutable so it never goes stale
    _json: str | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.event_type:
            raise EventFormatError("event_type must be non-empty")
        if not self.event_id:
            raise EventFormatError("event_id must be non-empty")
        if self.occurrence_time < 0:
            raise EventFormatError(
                f"occurrence_time must be non-negative, got {self.occurrence_time}"
            )
        for name in self.attributes:
            if not isinstance(name, str) or not name:
                raise EventFormatError(f"invalid attribute name {name!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_type": self.event_type,
            "event_id": self.event_id,
            "occurrence_time": self.occurrence_time,
            "source_id": self.source_id,
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Event:
        try:
            attrs = data.get("attributes", {})
            if not isinstance(attrs, Mapping):
                raise EventFormatError("attributes must be an object")
            for value in attrs.values():
                if not isinstance(value, (int, float, str, bool)):
                    raise EventFormatError(f"attribute value {value!r} is not a scalar")
            return cls(
                event_type=str(data["event_type"]),
                event_id=str(data["event_id"]),
                occurrence_time=int(data["occurrence_time"]),
                attributes=dict(attrs),
                source_id=str(data.get("source_id", "")),
            )
        except KeyError as exc:
            raise EventFormatError(f"missing field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        if self._json is None:
            object.__setattr__(self, "_json", json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")))
        return self._json

    @classmethod
    def from_json(cls, line: str | bytes) -> Event:
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EventFormatError(str(exc)) from None
        if not isinstance(data, dict):
            raise EventFormatError("event record must be a JSON object")
        return cls.from_dict(data)


def derived_event_id(type_name: str, trigger_id: str, ordinal: int) -> str:
    """Deterministic id for the ``ordinal``-th event a trigger produced for a type.

    Any worker that evaluates the same definition over the same input
    produces the same id, which is what lets consumers deduplicate dual
    emissions during a handover.
    """
    digest = hashlib.blake2b(
        f"{type_name}\x1f{trigger_id}\x1f{ordinal}".encode(), digest_size=10
    )
    return f"{type_name}-{digest.hexdigest()}"


def write_jsonl(events: Iterable[Event], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json())
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> Iterator[Event]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield Event.from_json(line)
