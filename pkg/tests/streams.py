"""Seeded small random streams and definitions for engine oracle checks."""

from __future__ import annotations

import random

from choreocep.definitions import EventTypeDefinition
from choreocep.events import Event


def _times(rng: random.Random, n: int, jitter_ms: int) -> list[int]:
    """Mostly increasing occurrence times with occasional out-of-order arrivals."""
    t = 0
    out = []
    for _ in range(n):
        t += rng.randint(0, 400)
        out.append(max(0, t - (rng.randint(0, jitter_ms) if rng.random() < 0.2 else 0)))
    return out


def aggregation_case(seed: int) -> tuple[EventTypeDefinition, list[Event]]:
    rng = random.Random(f"agg:{seed}")
    kind = rng.choice(["semantic", "semantic", "spatial", "temporal"])
    mode = rng.choice(["tumbling", "sliding"])
    if kind == "temporal" or rng.random() < 0.5:
        window = {"mode": mode, "time_ms": rng.choice([500, 1000, 2500])}
    else:
        window = {"mode": mode, "count": rng.randint(1, 5)}
    fn = rng.choice(["sum", "avg", "min", "max", "count"])
    context: dict = {"kind": kind, "window": window}
    if kind == "semantic":
        context["partition_key"] = "k"
    elif kind == "spatial":
        context["grid"] = {"cell": rng.choice([5.0, 10.0, 25.0])}
    defn = EventTypeDefinition.from_dict(
        {
            "name": "Agg",
            "operator": "Aggregation",
            "inputs": ["M"],
            "params": {"function": fn, "attribute": "v", "output": "value"},
            "context": context,
        }
    )
    n = rng.randint(1, 200)
    keys = [f"k{i}" for i in range(rng.randint(1, 6))]
    events = [
        Event("M", f"m{i}", t, {"k": rng.choice(keys), "v": rng.randint(-20, 20),
                                 "x": rng.uniform(0, 50), "y": rng.uniform(0, 50)})
        for i, t in enumerate(_times(rng, n, 3000))
    ]
    return defn, events


def composition_case(seed: int) -> tuple[EventTypeDefinition, list[Event]]:
    rng = random.Random(f"comp:{seed}")
    defn = EventTypeDefinition.from_dict(
        {
            "name": "Join",
            "operator": "Composition",
            "inputs": ["L", "R"],
            "params": {"within_ms": rng.choice([300, 1000, 4000])},
            "context": {"kind": "semantic", "partition_key": "k"},
        }
    )
    n = rng.randint(1, 200)
    keys = [f"k{i}" for i in range(rng.randint(1, 12))]
    events = []
    for i, t in enumerate(_times(rng, n, 6000)):
        etype = rng.choice(["L", "R"])
        events.append(Event(etype, f"{etype}{i}", t, {"k": rng.choice(keys), f"{etype.lower()}v": i}))
    return defn, events


def pattern_case(seed: int) -> tuple[EventTypeDefinition, list[Event]]:
    rng = random.Random(f"pat:{seed}")
    n_steps = rng.choice([1, 2, 2, 3])
    types = ["S0", "S1", "S2"][: max(2, n_steps)]
    steps = []
    for i in range(n_steps):
        step = {"type": types[i] if i < len(types) else types[-1]}
        if rng.random() < 0.4:
            step["predicate"] = f"v > {rng.randint(0, 5)}"
        steps.append(step)
    defn = EventTypeDefinition.from_dict(
        {
            "name": "Seq",
            "operator": "PatternDetection",
            "inputs": types,
            "params": {"sequence": steps, "within_ms": rng.choice([500, 2000, 5000])},
            "context": {"kind": "semantic", "partition_key": "k"},
        }
    )
    n = rng.randint(1, 200)
    keys = [f"k{i}" for i in range(rng.randint(4, 12))]
    events = []
    for i, t in enumerate(_times(rng, n, 4000)):
        etype = rng.choice(types)
        events.append(Event(etype, f"e{i}", t, {"k": rng.choice(keys), "v": rng.randint(0, 9), f"a{etype}": i}))
    return defn, events


def normalized(outputs):
    """Round floats so independent summation orders compare equal."""
    return [
        (trigger, {k: round(v, 9) if isinstance(v, float) else v for k, v in attrs.items()})
        for trigger, attrs in outputs
    ]
