"""Event-type registry: definitions, dependency graph, web-hooks, assignments."""

from __future__ import annotations

import copy
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from ..bus import CONTROL_PREFIX
from ..definitions import EventTypeDefinition
from ..errors import DefinitionError
from ..protocol import ASSIGN_TOPIC, inbox, make
from ..statestore import InMemoryStateStore, StoreClient, ctx_key, meta_key
from .webhooks import DeliveryReport, WebhookDispatcher


class CatalogError(Exception):
    pass


class ConflictError(CatalogError):
    pass


class ValidationError(CatalogError):
    pass


class NotFoundError(CatalogError):
    pass


class DependencyError(CatalogError):
    pass


@dataclass
class CatalogRecord:
    name: str
    definition: EventTypeDefinition | None  # None for producer-fed types
    consumers: set[str] = field(default_factory=set)
    assigned_worker: str | None = None
    webhooks: list[str] = field(default_factory=list)
    version: int = 1
    assignment_version: int = 0

    @property
    def primitive(self) -> bool:
        return self.definition is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "primitive": self.primitive,
            "definition": None if self.definition is None else self.definition.to_dict(),
            "consumers": sorted(self.consumers),
            "assigned_worker": self.assigned_worker,
            "webhooks": list(self.webhooks),
            "version": self.version,
            "assignment_version": self.assignment_version,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CatalogRecord:
        defn = d.get("definition")
        return cls(
            name=d["name"],
            definition=None if defn is None else EventTypeDefinition.from_dict(defn),
            consumers=set(d.get("consumers", ())),
            assigned_worker=d.get("assigned_worker"),
            webhooks=list(d.get("webhooks", ())),
            version=int(d.get("version", 1)),
            assignment_version=int(d.get("assignment_version", 0)),
        )


@dataclass(frozen=True)
class DependencyGraph:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]  # (input, derived)

    def is_acyclic(self) -> bool:
        return topological_order(self.nodes, self.edges) is not None


def topological_order(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """Kahn's algorithm with name ordering; None when the graph has a cycle."""
    nodes = set(nodes)
    out: dict[str, list[str]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for a, b in edges:
        out.setdefault(a, []).append(b)
        indeg[b] = indeg.get(b, 0) + 1
        indeg.setdefault(a, 0)
    ready = sorted(n for n, d in indeg.items() if d == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in sorted(out.get(n, ())):
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort()
    return order if len(order) == len(indeg) else None


class Catalog:
    """Registry of event types backed by the state store.

    ``publish(topic, payload)``, when set, is used to emit control messages
    (assignment requests, definition updates). The catalog never takes part
    in the data path.
    """

    def __init__(
        self,
        store: InMemoryStateStore | None = None,
        publish: Callable[[str, dict], None] | None = None,
        dispatcher: WebhookDispatcher | None = None,
    ) -> None:
        self.store: StoreClient = (store or InMemoryStateStore()).client("catalog")
        self.publish = publish
        self.dispatcher = dispatcher or WebhookDispatcher()
        self._records: dict[str, CatalogRecord] = {}
        self._lock = threading.RLock()

    # -- persistence -----------------------------------------------------

    def _persist(self, rec: CatalogRecord) -> None:
        self.store.put(meta_key(rec.name), json.dumps(rec.to_dict(), sort_keys=True).encode())

    @classmethod
    def restore(cls, store: InMemoryStateStore, **kwargs: Any) -> Catalog:
        cat = cls(store, **kwargs)
        for key in store.keys("meta/"):
            got = cat.store.get(key)
            if got is not None:
                rec = CatalogRecord.from_dict(json.loads(got[0]))
                cat._records[rec.name] = rec
        return cat

    def _emit(self, topic: str, payload: dict) -> None:
        if self.publish is not None:
            self.publish(topic, payload)

    # -- queries ---------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def names(self) -> list[str]:
        return sorted(self._records)

    def derived_names(self) -> list[str]:
        return sorted(n for n, r in self._records.items() if not r.primitive)

    def lookup_metadata(self, name: str) -> CatalogRecord:
        with self._lock:
            try:
                return copy.deepcopy(self._records[name])
            except KeyError:
                raise NotFoundError(f"unknown event type {name!r}") from None

    def peek(self, name: str) -> CatalogRecord | None:
        """The live record, without copying; callers must not mutate it."""
        return self._records.get(name)

    def _get(self, name: str) -> CatalogRecord:
        try:
            return self._records[name]
        except KeyError:
            raise NotFoundError(f"unknown event type {name!r}") from None

    def dependency_graph(self) -> DependencyGraph:
        with self._lock:
            edges = frozenset(
                (i, r.name)
                for r in self._records.values()
                if r.definition is not None
                for i in r.definition.inputs
            )
            return DependencyGraph(frozenset(self._records), edges)

    def assignments(self) -> dict[str, str | None]:
        return {n: r.assigned_worker for n, r in self._records.items() if not r.primitive}

    # -- mutations -------------------------------------------------------

    def _check_name(self, name: str) -> None:
        if not name or name.startswith(CONTROL_PREFIX):
            raise ValidationError(f"invalid event type name {name!r}")

    def declare_primitive(self, name: str) -> CatalogRecord:
        """Register a producer-fed type that other types may consume."""
        with self._lock:
            self._check_name(name)
            if name in self._records:
                raise ConflictError(f"event type {name!r} already registered")
            rec = CatalogRecord(name=name, definition=None)
            self._records[name] = rec
            self._persist(rec)
            return copy.deepcopy(rec)

    def _check_inputs(self, defn: EventTypeDefinition, replacing: str | None = None) -> None:
        unknown = [i for i in defn.inputs if i not in self._records]
        if unknown:
            raise ValidationError(f"{defn.name}: unknown input types {unknown}")
        edges = {
            (i, r.name)
            for r in self._records.values()
            if r.definition is not None and r.name != replacing
            for i in r.definition.inputs
        }
        edges |= {(i, defn.name) for i in defn.inputs}
        if topological_order(set(self._records) | {defn.name}, edges) is None:
            raise ValidationError(f"{defn.name}: definition would introduce a cycle")

    def register_event_type(
        self, defn: EventTypeDefinition | dict, webhooks: Iterable[str] = ()
    ) -> CatalogRecord:
        with self._lock:
            if isinstance(defn, dict):
                try:
                    defn = EventTypeDefinition.from_dict(defn)
                except DefinitionError as exc:
                    raise ValidationError(str(exc)) from None
            self._check_name(defn.name)
            if defn.name in self._records:
                raise ConflictError(f"event type {defn.name!r} already registered")
            self._check_inputs(defn)
            rec = CatalogRecord(name=defn.name, definition=defn, webhooks=list(webhooks))
            self._records[defn.name] = rec
            for i in defn.inputs:
                self._records[i].consumers.add(defn.name)
                self._persist(self._records[i])
            self._persist(rec)
            self.request_assignment(rec)
            return copy.deepcopy(rec)

    def request_assignment(self, rec: CatalogRecord, failed_worker: str | None = None) -> dict:
        req = make(
            "assignment_request",
            request_id=f"{rec.name}@{rec.assignment_version}",
            event_type=rec.name,
            definition=rec.definition.to_dict(),
            version=rec.assignment_version,
            failed_worker=failed_worker,
            orphan_subscriber=None if failed_worker is None else f"{failed_worker}:{rec.name}",
            checkpoint_version=self.store.context_version(rec.name),
            notify=bool(rec.webhooks),
        )
        self._emit(ASSIGN_TOPIC, req)
        return req

    def update_event_type(self, name: str, new_def: EventTypeDefinition | dict) -> CatalogRecord:
        with self._lock:
            if isinstance(new_def, dict):
                try:
                    new_def = EventTypeDefinition.from_dict(new_def)
                except DefinitionError as exc:
                    raise ValidationError(str(exc)) from None
            rec = self._get(name)
            if rec.primitive:
                raise ValidationError(f"{name!r} is producer-fed and has no definition")
            if new_def.name != name:
                raise ValidationError("update cannot rename an event type")
            self._check_inputs(new_def, replacing=name)
            for i in rec.definition.inputs:
                self._records[i].consumers.discard(name)
                self._persist(self._records[i])
            for i in new_def.inputs:
                self._records[i].consumers.add(name)
                self._persist(self._records[i])
            rec.definition = new_def
            rec.version += 1
            self._persist(rec)
            self._push_definition(rec)
            return copy.deepcopy(rec)

    def _push_definition(self, rec: CatalogRecord) -> None:
        if rec.assigned_worker is not None:
            self._emit(
                inbox(rec.assigned_worker),
                make(
                    "definition_update",
                    event_type=rec.name,
                    definition=rec.definition.to_dict(),
                    version=rec.version,
                    notify=bool(rec.webhooks),
                ),
            )

    def delete_event_type(self, name: str) -> None:
        with self._lock:
            rec = self._get(name)
            if rec.consumers:
                raise DependencyError(f"{name!r} is consumed by {sorted(rec.consumers)}")
            if rec.definition is not None:
                for i in rec.definition.inputs:
                    self._records[i].consumers.discard(name)
                    self._persist(self._records[i])
            del self._records[name]
            self.store.delete(meta_key(name))
            if self.store.get(ctx_key(name)) is not None:
                self.store.delete(ctx_key(name))
            if rec.assigned_worker is not None:
                self._emit(inbox(rec.assigned_worker), make("unassign", event_type=name))

    def add_webhooks(self, name: str, urls: Iterable[str]) -> CatalogRecord:
        with self._lock:
            rec = self._get(name)
            if rec.primitive:
                raise ValidationError(f"{name!r} is producer-fed; web-hooks attach to derived types")
            for url in urls:
                if not isinstance(url, str) or not url:
                    raise ValidationError(f"invalid web-hook URL {url!r}")
                if url not in rec.webhooks:
                    rec.webhooks.append(url)
            self._persist(rec)
            self._push_definition(rec)
            return copy.deepcopy(rec)

    def record_assignment(self, name: str, worker_id: str, version: int | None = None) -> bool:
        """Set the owning worker; stale versions are ignored (last writer by version wins).

        Without an explicit version the assignment always applies and bumps
        the assignment version. Returns whether the record changed.
        """
        with self._lock:
            rec = self._get(name)
            if version is None:
                version = rec.assignment_version + 1
            elif version <= rec.assignment_version:
                return False
            rec.assigned_worker = worker_id
            rec.assignment_version = version
            self._persist(rec)
            return True

    def handle_worker_failure(self, worker_id: str) -> list[dict]:
        """Publish a reassignment request for every type the failed worker owned.

        Requests are keyed by the record's assignment version, so a repeated
        failure signal yields identical, idempotent requests.
        """
        with self._lock:
            out = []
            for name in sorted(self._records):
                rec = self._records[name]
                if rec.assigned_worker == worker_id and not rec.primitive:
                    out.append(self.request_assignment(rec, failed_worker=worker_id))
            return out

    def dispatch_webhook(self, name: str, detected) -> DeliveryReport:
        rec = self._get(name)
        return self.dispatcher.dispatch(rec.webhooks, detected)
