"""Bookkeeping for one event type moving between two workers."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Phase(str, Enum):
    PROPOSED = "PROPOSED"
    STATE_TRANSFERRED = "STATE_TRANSFERRED"
    DUAL_DETECTION = "DUAL_DETECTION"
    ACKNOWLEDGED = "ACKNOWLEDGED"
    COMPLETED = "COMPLETED"
    ABORTED = "ABORTED"

    @property
    def terminal(self) -> bool:
        return self in (Phase.COMPLETED, Phase.ABORTED)


_NEXT = {
    Phase.PROPOSED: Phase.STATE_TRANSFERRED,
    Phase.STATE_TRANSFERRED: Phase.DUAL_DETECTION,
    Phase.DUAL_DETECTION: Phase.ACKNOWLEDGED,
    Phase.ACKNOWLEDGED: Phase.COMPLETED,
}


class HandoverError(Exception):
    pass


@dataclass
class HandoverSession:
    """One relocation of ``event_type`` from ``source_worker`` to ``target_worker``.

    The source side fills ``own_outputs`` with the ids it emits after its
    checkpoint and ``target_outputs`` with what it observes the target
    emitting on the type's topic; ``matched`` counts the agreeing prefix.
    """

    session_id: str
    event_type: str
    source_worker: str
    target_worker: str
    comparison_window: int = 10
    started_at: int = 0
    phase: Phase = Phase.PROPOSED
    matched: int = 0
    checkpoint_version: int | None = None
    checkpoint_count: int = 0
    own_outputs: list[str] = field(default_factory=list)
    target_outputs: list[str] = field(default_factory=list)
    # input id -> buffered_count after the source processed it
    history: dict[str, int] = field(default_factory=dict)
    abort_reason: str | None = None

    def advance(self, to: Phase) -> None:
        if to is Phase.ABORTED:
            if self.phase.terminal:
                raise HandoverError(f"{self.event_type}: cannot abort from {self.phase.value}")
            self.phase = to
            return
        if _NEXT.get(self.phase) is not to:
            raise HandoverError(
                f"{self.event_type}: illegal transition {self.phase.value} -> {to.value}"
            )
        self.phase = to

    def abort(self, reason: str) -> None:
        self.advance(Phase.ABORTED)
        self.abort_reason = reason

    def compare(self) -> bool | None:
        """Extend the agreeing prefix; False on a mismatch, True once the window is full."""
        while self.matched < min(len(self.own_outputs), len(self.target_outputs)):
            if self.own_outputs[self.matched] != self.target_outputs[self.matched]:
                return False
            self.matched += 1
        if self.matched >= self.comparison_window:
            return True
        return None
