"""Straight-line reference implementations used as test oracles.

None of these share code with the package beyond the Event type and the
predicate compiler. They trade speed for obviousness: the search oracles
walk plain lists with indices, and the engine oracles recompute every
output from the full admitted history with no eviction at all.
"""

from __future__ import annotations

import itertools
import math
from typing import Any


# -- relocation searches ---------------------------------------------------------


def input_similarity_oracle(event_types, flows, F, max_flow, rng):
    """Plain transcription of the input-similarity search.

    ``event_types`` maps type name to its inputs. Pairs are (input, uses),
    visited by ascending uses then name. Random picks draw from the sorted
    unselected names with ``rng.choice``.
    """
    names = sorted(event_types)
    inputs = sorted({i for ins in event_types.values() for i in ins})
    pairs = []
    for inp in inputs:
        uses = 0
        for n in names:
            if inp in event_types[n]:
                uses = uses + 1
        pairs.append([inp, uses])
    pairs.sort(key=lambda p: (p[1], p[0]))
    result = []
    pos = 0
    while F > max_flow:
        if pos < len(pairs):
            pair = pairs[pos]
            pos = pos + 1
        else:
            pair = None
        if pair is not None and pair[1] < len(names):
            for n in names:
                if pair[0] in event_types[n] and n not in result:
                    result.append(n)
                    F = F - flows.get(n, 0.0)
            continue
        unselected = [n for n in names if n not in result]
        if len(unselected) == 0:
            if pos < len(pairs):
                continue
            break
        pick = rng.choice(unselected)
        result.append(pick)
        F = F - flows.get(pick, 0.0)
    return result


def resource_usage_oracle(consumptions, IC, max_resource):
    """Biggest consumer first, ties by name, until IC <= max_resource."""
    order = sorted(consumptions.items(), key=lambda kv: (-kv[1], kv[0]))
    result = []
    i = 0
    while IC > max_resource and i < len(order):
        result.append(order[i][0])
        IC = IC - order[i][1]
        i = i + 1
    return result, IC


# -- engine -------------------------------------------------------------------------


def _merge(events) -> dict[str, Any]:
    d: dict[str, Any] = {}
    for ev in events:
        d.update(ev.attributes)
    return d


def _fold(fn, attr, events):
    if fn == "count":
        return len(events)
    vals = [ev.attributes[attr] for ev in events]
    if fn == "sum":
        return math.fsum(vals)
    if fn == "avg":
        return math.fsum(vals) / len(vals)
    if fn == "min":
        return min(vals)
    return max(vals)


def _cell(spec, e) -> str:
    g = spec.grid
    return f"{math.floor(e.attributes[g.x] / g.cell)}:{math.floor(e.attributes[g.y] / g.cell)}"


def _pkey(spec, e) -> str:
    if spec.kind == "semantic":
        return str(e.attributes[spec.partition_key])
    if spec.kind == "spatial":
        return _cell(spec, e)
    return "*"


def _label(spec, e) -> dict:
    if spec.kind == "semantic":
        return {spec.partition_key: e.attributes[spec.partition_key]}
    if spec.kind == "spatial":
        return {"cell": _cell(spec, e)}
    return {}


def aggregation_oracle(defn, events) -> list[tuple[str, dict]]:
    """Recompute every window from the full per-partition history.

    Returns ``(trigger event id, attributes)`` for each emission, in order.
    """
    p = defn.params
    fn, attr = p["function"], p.get("attribute")
    out_name = p.get("output", fn)
    spec = defn.context
    w = spec.window
    out = []

    if spec.kind == "temporal" and w.mode == "tumbling" and w.time_ms is not None:
        admitted = []
        open_index = None
        for e in events:
            idx = e.occurrence_time // w.time_ms
            if open_index is not None and idx < open_index:
                continue
            if open_index is not None and idx > open_index:
                members = [x for x in admitted if x.occurrence_time // w.time_ms == open_index]
                if members:
                    out.append((e.event_id, {"window_start": open_index * w.time_ms,
                                             out_name: _fold(fn, attr, members)}))
            admitted.append(e)
            open_index = idx
        return out

    history: dict[str, list] = {}
    marks: dict[str, int] = {}
    for e in events:
        key = _pkey(spec, e)
        seen = history.setdefault(key, [])
        if w.count is not None:
            seen.append(e)
            k = len(seen)
            if w.mode == "tumbling":
                if k % w.count == 0:
                    out.append((e.event_id, {**_label(spec, e), out_name: _fold(fn, attr, seen[k - w.count:])}))
            elif k >= w.count:
                out.append((e.event_id, {**_label(spec, e), out_name: _fold(fn, attr, seen[k - w.count:])}))
            continue
        t = e.occurrence_time
        if w.mode == "tumbling":
            idx = t // w.time_ms
            mark = marks.get(key)
            if mark is not None and idx < mark:
                continue
            if mark is not None and idx > mark:
                members = [x for x in seen if x.occurrence_time // w.time_ms == mark]
                if members:
                    out.append((e.event_id, {**_label(spec, e), out_name: _fold(fn, attr, members)}))
            seen.append(e)
            marks[key] = idx
            continue
        # sliding time window over (mark - T, mark]
        mark = marks.get(key)
        if mark is not None and t <= mark - w.time_ms:
            continue
        seen.append(e)
        mark = t if mark is None else max(mark, t)
        marks[key] = mark
        members = sorted(
            (x for x in seen if mark - w.time_ms < x.occurrence_time <= mark),
            key=lambda x: x.occurrence_time,
        )
        out.append((e.event_id, {**_label(spec, e), out_name: _fold(fn, attr, members)}))
    return out


def composition_oracle(defn, events) -> list[tuple[str, dict]]:
    """All pairs of differently-typed, same-key events no further apart than the window.

    An arrival more than the window older than the newest admitted event is
    ignored entirely.
    """
    within = defn.params["within_ms"]
    left_type = defn.inputs[0]
    spec = defn.context
    admitted = []
    mark = None
    out = []
    for e in events:
        t = e.occurrence_time
        if mark is not None and t < mark - within:
            continue
        key = _pkey(spec, e)
        for o in admitted:
            if _pkey(spec, o) != key or o.event_type == e.event_type:
                continue
            if abs(o.occurrence_time - t) > within:
                continue
            left, right = (o, e) if o.event_type == left_type else (e, o)
            out.append((e.event_id, _merge([left, right])))
        admitted.append(e)
        mark = t if mark is None else max(mark, t)
    return out


def pattern_oracle(defn, events, compile_predicate) -> list[tuple[str, dict]]:
    """Exhaustive scan of ordered tuples of earlier arrivals.

    A completed match is a tuple of earlier admitted events, one per leading
    step, in arrival order with non-decreasing times, followed by the
    trigger; the first and last events lie within the window.
    """
    steps = [(s["type"], compile_predicate(s["predicate"]) if s.get("predicate") else None)
             for s in defn.params["sequence"]]
    within = defn.params["within_ms"]
    spec = defn.context

    def fits(step, ev):
        etype, pred = step
        if ev.event_type != etype:
            return False
        return pred is None or pred(ev.attributes)

    stored = []
    mark = None
    out = []
    k = len(steps) - 1
    for e in events:
        t = e.occurrence_time
        hits = [i for i, s in enumerate(steps) if fits(s, e)]
        if mark is not None and t < mark - within:
            continue
        if k in hits:
            key = _pkey(spec, e)
            part = [x for x in stored if _pkey(spec, x) == key]
            for combo in itertools.combinations(range(len(part)), k):
                seq = [part[i] for i in combo]
                if not all(fits(steps[j], seq[j]) for j in range(k)):
                    continue
                if any(seq[j + 1].occurrence_time < seq[j].occurrence_time for j in range(k - 1)):
                    continue
                if seq and (seq[-1].occurrence_time > t or t - seq[0].occurrence_time > within):
                    continue
                out.append((e.event_id, _merge(seq + [e])))
        if any(i < k for i in hits):
            stored.append(e)
        mark = t if mark is None else max(mark, t)
    return out


def run_engine(defn, events):
    """Feed ``events`` through the real engine; same output shape as the oracles."""
    from choreocep import evaluate, new_state

    state = new_state(defn)
    out = []
    for e in events:
        derived, state = evaluate(defn, e, state)
        out.extend((e.event_id, dict(d.attributes)) for d in derived)
    return out
