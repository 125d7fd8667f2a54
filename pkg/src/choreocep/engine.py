"""Evaluation of the eight event-processing operators.

``evaluate`` is the single entry point a worker calls per (definition, input
event). Stateless operators never touch the state they are handed; stateful
ones buffer input in the ``ContextState`` partition chosen by the context and
emit only when their window or pattern condition fires. Everything is driven
by event occurrence times, never by a wall clock, so replaying a stream
reproduces the same output stream.
"""

from __future__ import annotations

import bisect
from typing import Any, Iterable, Mapping

from .context import ContextState, partition_id
from .definitions import EventTypeDefinition, Operator
from .errors import EvaluationError, MissingAttributeError
from .events import Event, derived_event_id


def new_state(defn: EventTypeDefinition) -> ContextState:
    return ContextState(owner_type=defn.name)


def evaluate(
    defn: EventTypeDefinition, event: Event, state: ContextState
) -> tuple[list[Event], ContextState]:
    """Feed one input event to ``defn``; return derived events and the state.

    Raises ``EvaluationError`` when the event cannot be evaluated (for
    instance a referenced attribute is missing). In that case the state is
    left exactly as it was.
    """
    if event.event_type not in defn.inputs:
        raise ValueError(f"{event.event_type!r} is not an input of {defn.name!r}")
    if state.owner_type != defn.name:
        raise ValueError(f"state belongs to {state.owner_type!r}, not {defn.name!r}")
    handler = _HANDLERS[defn.operator]
    payloads = handler(defn, event, state)
    out = [
        Event(
            event_type=defn.name,
            event_id=derived_event_id(defn.name, event.event_id, i),
            occurrence_time=event.occurrence_time,
            attributes=attrs,
            source_id=defn.name,
        )
        for i, attrs in enumerate(payloads)
    ]
    return out, state


def _get(attrs: Mapping[str, Any], name: str) -> Any:
    try:
        return attrs[name]
    except KeyError:
        raise MissingAttributeError(name) from None


# -- stateless -------------------------------------------------------------


def _filtering(defn, e, state):
    if defn.compiled["predicate"](e.attributes):
        return [dict(e.attributes)]
    return []


def _projection(defn, e, state):
    return [{k: _get(e.attributes, k) for k in defn.compiled["keep"]}]


def _translation(defn, e, state):
    src = e.attributes
    out = dict(src)
    for rule in defn.compiled["rules"]:
        op = rule["op"]
        target = rule["target"]
        if op == "set":
            out[target] = rule["value"]
            continue
        value = _get(src, rule["source"])
        try:
            if op == "copy":
                out[target] = value
            elif op == "add":
                out[target] = value + rule["value"]
            elif op == "sub":
                out[target] = value - rule["value"]
            elif op == "mul":
                out[target] = value * rule["value"]
            elif op == "div":
                out[target] = value / rule["value"]
            elif op == "round":
                out[target] = round(value, rule.get("value", 0))
            elif op == "concat":
                out[target] = f"{value}{rule.get('value', '')}"
            elif op == "upper":
                out[target] = str(value).upper()
            elif op == "lower":
                out[target] = str(value).lower()
        except (TypeError, ZeroDivisionError) as exc:
            raise EvaluationError(f"{defn.name}: {op} on {rule['source']}: {exc}") from None
    for name in defn.compiled["drop"]:
        out.pop(name, None)
    return [out]


def _division(defn, e, state):
    attr = defn.compiled["branch_attribute"]
    out = []
    for name, pred in defn.compiled["branches"]:
        if pred(e.attributes):
            d = dict(e.attributes)
            d[attr] = name
            out.append(d)
    return out


def _enrichment(defn, e, state):
    c = defn.compiled
    key = str(_get(e.attributes, c["key"]))
    extra = c["table"].get(key)
    if extra is None:
        return [] if c["on_missing"] == "drop" else [dict(e.attributes)]
    d = dict(e.attributes)
    d.update(extra)
    return [d]


# -- aggregation -------------------------------------------------------------


def _aggregate(fn: str, attr: str | None, events: list[Event]) -> float | int:
    if fn == "count":
        return len(events)
    values = [ev.attributes[attr] for ev in events]
    if fn == "sum":
        return sum(values)
    if fn == "avg":
        return sum(values) / len(values)
    if fn == "min":
        return min(values)
    return max(values)


def _window_push(window, buf: list[Event], mark: int | None, e: Event):
    """Apply one arrival to a single partition's window.

    Returns ``(closed_windows, buffer, mark, accepted)``.
    """
    if window.count_based:
        n = window.count
        buf.append(e)
        if window.mode == "tumbling":
            if len(buf) == n:
                return [buf], [], mark, True
            return [], buf, mark, True
        if len(buf) > n:
            del buf[0]
        return ([list(buf)] if len(buf) == n else []), buf, mark, True

    t, size = e.occurrence_time, window.time_ms
    if window.mode == "tumbling":
        index = t // size
        if mark is not None and index < mark:
            return [], buf, mark, False
        closed = []
        if mark is not None and index > mark and buf:
            closed, buf = [buf], []
        buf.append(e)
        return closed, buf, index, True

    # sliding time window: contents are the events in (mark - size, mark]
    if mark is not None and t <= mark - size:
        return [], buf, mark, False
    times = [ev.occurrence_time for ev in buf]
    buf.insert(bisect.bisect_right(times, t), e)
    mark = t if mark is None else max(mark, t)
    cutoff = mark - size
    drop = 0
    while drop < len(buf) and buf[drop].occurrence_time <= cutoff:
        drop += 1
    if drop:
        del buf[:drop]
    return [list(buf)], buf, mark, True


def _aggregation(defn, e, state):
    c = defn.compiled
    ctx = defn.context
    fn, attr = c["function"], c["attribute"]
    if attr is not None and fn != "count":
        value = _get(e.attributes, attr)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise EvaluationError(f"{defn.name}: {attr}={value!r} is not numeric")
    pid = partition_id(ctx, e)
    window = ctx.window

    if ctx.kind == "temporal" and window.mode == "tumbling" and not window.count_based:
        # one partition per window index; a later window closes the open one
        index = int(pid)
        open_index = state.watermarks.get("*")
        if open_index is not None and index < open_index:
            state.late_dropped += 1
            return []
        closed = []
        if open_index is not None and index > open_index:
            old = state.partitions.pop(str(open_index), None)
            if old:
                closed.append((old, {"window_start": open_index * window.time_ms}))
        state.watermarks["*"] = index
        state.partitions.setdefault(pid, []).append(e)
    else:
        buf = state.partitions.get(pid, [])
        mark = state.watermarks.get(pid)
        windows, buf, mark, accepted = _window_push(window, buf, mark, e)
        if not accepted:
            state.late_dropped += 1
            return []
        if buf:
            state.partitions[pid] = buf
        else:
            state.partitions.pop(pid, None)
        if mark is not None:
            state.watermarks[pid] = mark
        if ctx.kind == "semantic":
            label = {ctx.partition_key: e.attributes[ctx.partition_key]}
        elif ctx.kind == "spatial":
            label = {"cell": pid}
        else:
            label = {}
        closed = [(w, label) for w in windows]

    out = []
    for events, label in closed:
        d = dict(label)
        d[c["output"]] = _aggregate(fn, attr, events)
        out.append(d)
    return out


# -- composition and pattern detection ---------------------------------------------


_MARK = "*"  # newest admitted occurrence time, across all partitions
_SWEPT = "swept"  # mark at the last buffer sweep


def _admit(state: ContextState, pid: str, e: Event, within: int) -> list[Event] | None:
    """Return the partition buffer, or None when ``e`` is too late to admit.

    Lateness is judged against the newest occurrence time admitted in any
    partition: anything more than ``within`` older than it is dropped.
    """
    mark = state.watermarks.get(_MARK)
    if mark is not None and e.occurrence_time < mark - within:
        state.late_dropped += 1
        return None
    return state.partitions.get(pid, [])


def _store(state: ContextState, pid: str, buf: list[Event], e: Event, within: int) -> None:
    if buf:
        state.partitions[pid] = buf
    else:
        state.partitions.pop(pid, None)
    mark = state.watermarks.get(_MARK)
    mark = e.occurrence_time if mark is None else max(mark, e.occurrence_time)
    state.watermarks[_MARK] = mark
    swept = state.watermarks.get(_SWEPT)
    if swept is None:
        state.watermarks[_SWEPT] = mark
    elif mark - swept >= within:
        # admitted events are never older than mark - within, so anything
        # older than mark - 2*within can no longer fall inside a match
        cutoff = mark - 2 * within
        for key in list(state.partitions):
            kept = [ev for ev in state.partitions[key] if ev.occurrence_time >= cutoff]
            if kept:
                state.partitions[key] = kept
            else:
                del state.partitions[key]
        state.watermarks[_SWEPT] = mark


def _composition(defn, e, state):
    within = defn.compiled["within_ms"]
    pid = partition_id(defn.context, e)
    buf = _admit(state, pid, e, within)
    if buf is None:
        return []
    left_type = defn.inputs[0]
    out = []
    t = e.occurrence_time
    for other in buf:
        if other.event_type == e.event_type or abs(other.occurrence_time - t) > within:
            continue
        left, right = (other, e) if other.event_type == left_type else (e, other)
        d = dict(left.attributes)
        d.update(right.attributes)
        out.append(d)
    _store(state, pid, buf + [e], e, within)
    return out


def _step_matches(step, e: Event) -> bool:
    etype, pred = step
    if e.event_type != etype:
        return False
    if pred is None:
        return True
    try:
        return pred(e.attributes)
    except EvaluationError:
        return False


def _sequences(steps, buf: list[Event], start: int, prev_time: int | None) -> Iterable[list[Event]]:
    if not steps:
        yield []
        return
    for i in range(start, len(buf)):
        ev = buf[i]
        if prev_time is not None and ev.occurrence_time < prev_time:
            continue
        if _step_matches(steps[0], ev):
            for rest in _sequences(steps[1:], buf, i + 1, ev.occurrence_time):
                yield [ev] + rest


def _pattern(defn, e, state):
    c = defn.compiled
    steps, within = c["sequence"], c["within_ms"]
    pid = partition_id(defn.context, e)
    # predicate errors on the triggering event are real evaluation errors
    matched = []
    for i, (etype, pred) in enumerate(steps):
        if e.event_type == etype and (pred is None or pred(e.attributes)):
            matched.append(i)
    buf = _admit(state, pid, e, within)
    if buf is None:
        return []
    out = []
    t = e.occurrence_time
    if matched and matched[-1] == len(steps) - 1:
        for seq in _sequences(steps[:-1], buf, 0, None):
            if seq and (seq[-1].occurrence_time > t or t - seq[0].occurrence_time > within):
                continue
            d: dict[str, Any] = {}
            for ev in seq:
                d.update(ev.attributes)
            d.update(e.attributes)
            out.append(d)
    if any(i < len(steps) - 1 for i in matched):
        buf = buf + [e]
    _store(state, pid, buf, e, within)
    return out


_HANDLERS = {
    Operator.FILTERING: _filtering,
    Operator.PROJECTION: _projection,
    Operator.TRANSLATION: _translation,
    Operator.DIVISION: _division,
    Operator.ENRICHMENT: _enrichment,
    Operator.AGGREGATION: _aggregation,
    Operator.COMPOSITION: _composition,
    Operator.PATTERN_DETECTION: _pattern,
}
