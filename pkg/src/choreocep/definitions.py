"""Event-type definitions: operator, inputs, parameters and context.

The JSON document format mirrors the dataclass fields, for example::

    {
      "name": "DriverAvgGrade",
      "operator": "Aggregation",
      "inputs": ["DriverGrade"],
      "params": {"function": "avg", "attribute": "grade"},
      "context": {"kind": "semantic", "partition_key": "driver_id",
                  "window": {"mode": "tumbling", "count": 3}},
      "output_attributes": ["driver_id", "avg"]
    }

See ``docs/definitions.md`` for the per-operator parameter reference.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import DefinitionError
from .predicates import Predicate, compile_predicate


class Operator(str, enum.Enum):
    FILTERING = "Filtering"
    PROJECTION = "Projection"
    TRANSLATION = "Translation"
    DIVISION = "Division"
    ENRICHMENT = "Enrichment"
    AGGREGATION = "Aggregation"
    COMPOSITION = "Composition"
    PATTERN_DETECTION = "PatternDetection"

    @property
    def stateful(self) -> bool:
        return self in _STATEFUL


_STATEFUL = frozenset({Operator.AGGREGATION, Operator.COMPOSITION, Operator.PATTERN_DETECTION})
_SINGLE_INPUT = frozenset(
    {
        Operator.FILTERING,
        Operator.PROJECTION,
        Operator.TRANSLATION,
        Operator.DIVISION,
        Operator.ENRICHMENT,
    }
)
AGGREGATE_FUNCTIONS = ("sum", "avg", "min", "max", "count")
TRANSLATION_OPS = ("set", "copy", "add", "sub", "mul", "div", "round", "concat", "upper", "lower")


@dataclass(frozen=True)
class WindowSpec:
    """Tumbling or sliding window, sized either in events or in milliseconds."""

    mode: str
    count: int | None = None
    time_ms: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("tumbling", "sliding"):
            raise DefinitionError(f"unknown window mode {self.mode!r}")
        if (self.count is None) == (self.time_ms is None):
            raise DefinitionError("window needs exactly one of count or time_ms")
        size = self.count if self.count is not None else self.time_ms
        if not isinstance(size, int) or size <= 0:
            raise DefinitionError(f"window length must be a positive integer, got {size!r}")

    @property
    def count_based(self) -> bool:
        return self.count is not None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"mode": self.mode}
        if self.count is not None:
            d["count"] = self.count
        else:
            d["time_ms"] = self.time_ms
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> WindowSpec:
        return cls(mode=d.get("mode", ""), count=d.get("count"), time_ms=d.get("time_ms"))


@dataclass(frozen=True)
class GridSpec:
    cell: float
    x: str = "x"
    y: str = "y"

    def __post_init__(self) -> None:
        if not isinstance(self.cell, (int, float)) or self.cell <= 0:
            raise DefinitionError(f"grid cell size must be > 0, got {self.cell!r}")
        if not self.x or not self.y:
            raise DefinitionError("grid coordinate attributes must be named")


@dataclass(frozen=True)
class ContextSpec:
    """How a stateful operator partitions and windows its input.

    ``temporal`` groups by time window only; ``semantic`` partitions on the
    value of ``partition_key``; ``spatial`` partitions on a square grid cell.
    Semantic and spatial contexts may carry a window applied within each
    partition.
    """

    kind: str
    window: WindowSpec | None = None
    partition_key: str | None = None
    grid: GridSpec | None = None

    def __post_init__(self) -> None:
        if self.kind == "temporal":
            if self.window is None:
                raise DefinitionError("temporal context requires a window")
        elif self.kind == "semantic":
            if not self.partition_key:
                raise DefinitionError("semantic context requires a non-empty partition_key")
        elif self.kind == "spatial":
            if self.grid is None:
                raise DefinitionError("spatial context requires a grid")
        else:
            raise DefinitionError(f"unknown context kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.window is not None:
            d["window"] = self.window.to_dict()
        if self.partition_key is not None:
            d["partition_key"] = self.partition_key
        if self.grid is not None:
            d["grid"] = {"cell": self.grid.cell, "x": self.grid.x, "y": self.grid.y}
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ContextSpec:
        window = WindowSpec.from_dict(d["window"]) if d.get("window") else None
        grid = GridSpec(**d["grid"]) if d.get("grid") else None
        return cls(kind=d.get("kind", ""), window=window, partition_key=d.get("partition_key"), grid=grid)


@dataclass(frozen=True, eq=False)
class EventTypeDefinition:
    name: str
    operator: Operator
    inputs: tuple[str, ...]
    params: Mapping[str, Any] = field(default_factory=dict)
    context: ContextSpec | None = None
    output_attributes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        try:
            op = Operator(self.operator)
        except ValueError:
            raise DefinitionError(f"unknown operator {self.operator!r}") from None
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "output_attributes", tuple(self.output_attributes))
        object.__setattr__(self, "params", dict(self.params))
        if not self.name:
            raise DefinitionError("event type name must be non-empty")
        if not self.inputs:
            raise DefinitionError(f"{self.name}: inputs must be non-empty")
        if len(set(self.inputs)) != len(self.inputs):
            raise DefinitionError(f"{self.name}: duplicate input types")
        if self.name in self.inputs:
            raise DefinitionError(f"{self.name}: a type cannot consume itself")
        if op in _SINGLE_INPUT and len(self.inputs) != 1:
            raise DefinitionError(f"{self.name}: {op.value} takes exactly one input")
        if op is Operator.COMPOSITION and len(self.inputs) != 2:
            raise DefinitionError(f"{self.name}: Composition takes exactly two inputs")
        if op.stateful and self.context is None:
            raise DefinitionError(f"{self.name}: {op.value} requires a context")
        if not op.stateful and self.context is not None:
            raise DefinitionError(f"{self.name}: stateless {op.value} takes no context")
        object.__setattr__(self, "_compiled", _compile_params(self))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventTypeDefinition):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash((self.name, self.operator, self.inputs))

    @property
    def stateful(self) -> bool:
        return self.operator.stateful

    @property
    def compiled(self) -> dict[str, Any]:
        return self._compiled  # type: ignore[attr-defined]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "operator": self.operator.value,
            "inputs": list(self.inputs),
            "params": json.loads(json.dumps(self.params)),
            "output_attributes": list(self.output_attributes),
        }
        if self.context is not None:
            d["context"] = self.context.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EventTypeDefinition:
        try:
            ctx = ContextSpec.from_dict(d["context"]) if d.get("context") else None
            return cls(
                name=d["name"],
                operator=d["operator"],
                inputs=tuple(d["inputs"]),
                params=d.get("params", {}),
                context=ctx,
                output_attributes=tuple(d.get("output_attributes", ())),
            )
        except KeyError as exc:
            raise DefinitionError(f"definition missing field {exc.args[0]!r}") from None
        except TypeError as exc:
            raise DefinitionError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EventTypeDefinition:
        return cls.from_dict(json.loads(text))


def load_definitions(path) -> list[EventTypeDefinition]:
    """Read a JSON file holding one definition or a list of them."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [EventTypeDefinition.from_dict(d) for d in data]


def _require(defn: EventTypeDefinition, key: str) -> Any:
    if key not in defn.params:
        raise DefinitionError(f"{defn.name}: {defn.operator.value} needs param {key!r}")
    return defn.params[key]


def _within(defn: EventTypeDefinition) -> int:
    within = _require(defn, "within_ms")
    if not isinstance(within, int) or within <= 0:
        raise DefinitionError(f"{defn.name}: within_ms must be a positive integer")
    return within


def _compile_params(defn: EventTypeDefinition) -> dict[str, Any]:
    op = defn.operator
    p = defn.params
    if op is Operator.FILTERING:
        return {"predicate": compile_predicate(_require(defn, "predicate"))}
    if op is Operator.PROJECTION:
        keep = _require(defn, "keep")
        if not keep or not all(isinstance(k, str) and k for k in keep):
            raise DefinitionError(f"{defn.name}: keep must list attribute names")
        return {"keep": tuple(keep)}
    if op is Operator.TRANSLATION:
        rules = _require(defn, "rules")
        for rule in rules:
            if rule.get("op") not in TRANSLATION_OPS:
                raise DefinitionError(f"{defn.name}: unknown translation op {rule.get('op')!r}")
            if not rule.get("target"):
                raise DefinitionError(f"{defn.name}: translation rule needs a target")
            if rule["op"] != "set" and not rule.get("source"):
                raise DefinitionError(f"{defn.name}: {rule['op']} rule needs a source")
        return {"rules": tuple(dict(r) for r in rules), "drop": tuple(p.get("drop", ()))}
    if op is Operator.DIVISION:
        branches = _require(defn, "branches")
        if not branches:
            raise DefinitionError(f"{defn.name}: Division needs at least one branch")
        compiled = []
        for b in branches:
            if not b.get("name"):
                raise DefinitionError(f"{defn.name}: every branch needs a name")
            compiled.append((b["name"], compile_predicate(b["predicate"])))
        return {"branches": tuple(compiled), "branch_attribute": p.get("branch_attribute", "branch")}
    if op is Operator.ENRICHMENT:
        key = _require(defn, "key")
        table = _require(defn, "table")
        if not isinstance(table, Mapping):
            raise DefinitionError(f"{defn.name}: enrichment table must be an object")
        on_missing = p.get("on_missing", "pass")
        if on_missing not in ("pass", "drop"):
            raise DefinitionError(f"{defn.name}: on_missing must be 'pass' or 'drop'")
        return {"key": key, "table": {str(k): dict(v) for k, v in table.items()}, "on_missing": on_missing}
    if op is Operator.AGGREGATION:
        fn = _require(defn, "function")
        if fn not in AGGREGATE_FUNCTIONS:
            raise DefinitionError(f"{defn.name}: unknown aggregate function {fn!r}")
        attr = p.get("attribute")
        if fn != "count" and not attr:
            raise DefinitionError(f"{defn.name}: {fn} needs an attribute")
        if defn.context is not None and defn.context.window is None:
            raise DefinitionError(f"{defn.name}: Aggregation requires a windowed context")
        return {"function": fn, "attribute": attr, "output": p.get("output", fn)}
    if op is Operator.COMPOSITION:
        return {"within_ms": _within(defn)}
    if op is Operator.PATTERN_DETECTION:
        steps = _require(defn, "sequence")
        if not steps:
            raise DefinitionError(f"{defn.name}: sequence must be non-empty")
        compiled: list[tuple[str, Predicate | None]] = []
        for step in steps:
            etype = step.get("type")
            if etype not in defn.inputs:
                raise DefinitionError(f"{defn.name}: sequence type {etype!r} is not an input")
            pred = compile_predicate(step["predicate"]) if step.get("predicate") else None
            compiled.append((etype, pred))
        return {"sequence": tuple(compiled), "within_ms": _within(defn)}
    raise DefinitionError(f"unknown operator {op!r}")  # pragma: no cover
