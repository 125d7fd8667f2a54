"""Versioned key-value store for catalog metadata and context checkpoints.

Keys follow two conventions: ``meta/{type}`` for catalog records and
``ctx/{type}`` for checkpointed context state. Replication is simulated: a
write becomes visible to *other* clients only ``lag_ms`` after it was made,
measured on the store's clock, while the writing client always reads its own
writes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any

from .context import ContextState, deserialize_state, serialize_state


def meta_key(event_type: str) -> str:
    return f"meta/{event_type}"


def ctx_key(event_type: str) -> str:
    return f"ctx/{event_type}"


@dataclass(frozen=True)
class StoreEntry:
    key: str
    value: bytes | None  # None marks a delete
    version: int
    written_at: int
    writer: str


class _ZeroClock:
    now = 0


class InMemoryStateStore:
    def __init__(self, clock: Any = None, lag_ms: int = 0) -> None:
        if lag_ms < 0:
            raise ValueError("lag_ms must be >= 0")
        self.clock = clock if clock is not None else _ZeroClock()
        self.lag_ms = lag_ms
        self._lock = threading.Lock()
        self._history: dict[str, list[StoreEntry]] = {}
        self.available = True

    def client(self, client_id: str) -> StoreClient:
        if not client_id:
            raise ValueError("client_id must be non-empty")
        return StoreClient(self, client_id)

    def _check(self) -> None:
        if not self.available:
            raise StoreUnavailable("state store unavailable")

    def _write(self, key: str, value: bytes | None, writer: str) -> int:
        if not key:
            raise ValueError("key must be non-empty")
        self._check()
        with self._lock:
            hist = self._history.setdefault(key, [])
            version = hist[-1].version + 1 if hist else 1
            now = self.clock.now
            hist.append(StoreEntry(key, value, version, now, writer))
            # entries older than the newest already-replicated one are unreachable
            cutoff = now - self.lag_ms
            keep_from = 0
            for i, entry in enumerate(hist):
                if entry.written_at <= cutoff:
                    keep_from = i
            if keep_from:
                del hist[:keep_from]
            return version

    def _read(self, key: str, reader: str) -> StoreEntry | None:
        self._check()
        with self._lock:
            hist = self._history.get(key)
            if not hist:
                return None
            cutoff = self.clock.now - self.lag_ms
            for entry in reversed(hist):
                if entry.writer == reader or entry.written_at <= cutoff:
                    return entry
            return None

    def keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(
                k for k, h in self._history.items() if k.startswith(prefix) and h and h[-1].value is not None
            )


class StoreUnavailable(Exception):
    pass


class StoreClient:
    """A store handle bound to one client identity (read-your-writes scope)."""

    def __init__(self, store: InMemoryStateStore, client_id: str) -> None:
        self.store = store
        self.client_id = client_id

    def put(self, key: str, value: bytes) -> int:
        return self.store._write(key, bytes(value), self.client_id)

    def get(self, key: str) -> tuple[bytes, int] | None:
        entry = self.store._read(key, self.client_id)
        if entry is None or entry.value is None:
            return None
        return entry.value, entry.version

    def delete(self, key: str) -> None:
        self.store._write(key, None, self.client_id)

    def checkpoint_context(self, event_type: str, state: ContextState) -> int:
        return self.put(ctx_key(event_type), serialize_state(state))

    def load_context(self, event_type: str) -> ContextState | None:
        got = self.load_context_versioned(event_type)
        return None if got is None else got[0]

    def load_context_versioned(self, event_type: str) -> tuple[ContextState, int] | None:
        """Return ``(state, version)`` or None; raises StateDecodeError on corrupt data."""
        got = self.get(ctx_key(event_type))
        if got is None:
            return None
        value, version = got
        return deserialize_state(value), version

    def context_version(self, event_type: str) -> int | None:
        got = self.get(ctx_key(event_type))
        return None if got is None else got[1]
