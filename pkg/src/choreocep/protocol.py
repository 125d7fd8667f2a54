"""Control-plane topics and message schemas.

All choreography travels on ``ctl.`` topics as JSON objects carrying a
``kind`` field. ``docs/protocol.md`` lists every schema with an example.
"""

from __future__ import annotations

from typing import Any

HEARTBEAT_TOPIC = "ctl.heartbeat"
LOADS_TOPIC = "ctl.loads"
ASSIGN_TOPIC = "ctl.assign"
ASSIGNMENTS_TOPIC = "ctl.assignments"
DETECTIONS_TOPIC = "ctl.detections"
CATALOG_ID = "catalog"

SCHEMAS: dict[str, tuple[str, ...]] = {
    "heartbeat": ("worker_id", "time", "lifecycle", "F", "IC", "n_types", "busy"),
    "snapshot_request": ("request_id", "requester"),
    "load_snapshot": ("request_id", "worker_id", "F", "IC", "n_types", "timestamp", "lifecycle", "busy"),
    "relocation_proposal": ("session_id", "source", "target", "purpose", "types"),
    "proposal_response": ("session_id", "target", "accepted", "reason"),
    "handover_phase": ("session_id", "event_type", "phase", "source", "target"),
    "assignment_request": ("request_id", "event_type", "definition", "version"),
    "assign": ("event_type", "definition", "version", "notify"),
    "assignment_update": ("event_type", "worker_id", "version", "reason"),
    "definition_update": ("event_type", "definition", "version", "notify"),
    "unassign": ("event_type",),
    "detection": ("event_type", "event"),
}


class ProtocolError(ValueError):
    pass


def inbox(worker_id: str) -> str:
    return f"ctl.inbox.{worker_id}"


def make(kind: str, **fields: Any) -> dict[str, Any]:
    """Build a control message, checking that the schema's fields are present."""
    try:
        required = SCHEMAS[kind]
    except KeyError:
        raise ProtocolError(f"unknown control message kind {kind!r}") from None
    missing = [f for f in required if f not in fields]
    if missing:
        raise ProtocolError(f"{kind} message missing {missing}")
    return {"kind": kind, **fields}


def validate(msg: Any) -> dict[str, Any]:
    if not isinstance(msg, dict) or "kind" not in msg:
        raise ProtocolError("control message must be an object with a 'kind'")
    fields = {k: v for k, v in msg.items() if k != "kind"}
    return make(msg["kind"], **fields)
