"""Worker behaviour on a small simulated cluster with hand-written types."""

import pytest

from choreocep.events import Event
from choreocep.harness.cluster import NO_BALANCING, Cluster
from choreocep.worker import ACTIVE, TERMINATED, RelocationConfig, WorkerConfig

FAST = {"name": "Fast", "operator": "Filtering", "inputs": ["Pos"], "params": {"predicate": "speed > 80"}}
SLOW = {"name": "Slow", "operator": "Filtering", "inputs": ["Pos"], "params": {"predicate": "speed < 20"}}
AVG = {
    "name": "AvgSpeed",
    "operator": "Aggregation",
    "inputs": ["Pos"],
    "params": {"function": "avg", "attribute": "speed"},
    "context": {"kind": "semantic", "partition_key": "car", "window": {"mode": "tumbling", "count": 4}},
}


def make_cluster(types=(FAST,), workers=1, relocation=None, **worker_kw):
    cfg = WorkerConfig(relocation=RelocationConfig(**(relocation or NO_BALANCING)), **worker_kw)
    c = Cluster(cfg, seed=0)
    for _ in range(workers):
        c.spawn()
    c.settle()
    c.catalog.declare_primitive("Pos")
    for d in types:
        c.catalog.register_event_type(d)
        c.bus.pump()
        c.run_until(c.clock.now + 2000)
    return c


def feed(c, n, start, step=100, first=0, **attrs):
    for i in range(first, first + n):
        c.publish(Event("Pos", f"p{i}", start + i * step, {"speed": 90, "car": f"c{i % 3}", **attrs}, "producer"))


def records(c, **match):
    return [r for r in c.trace.records if all(r.get(k) == v for k, v in match.items())]


def phases(c, event_type):
    return [r["phase"] for r in records(c, kind="handover_phase", event_type=event_type)]


class TestHandover:
    def test_stateless_handover_completes(self):
        c = make_cluster()
        source = c.owner_of("Fast")
        c.workers[source].request_relocation(["Fast"])
        feed(c, 60, 4000)
        c.run_until(12_000)
        assert phases(c, "Fast") == ["STATE_TRANSFERRED", "DUAL_DETECTION", "COMPLETED"]
        target = c.owner_of("Fast")
        assert target != source
        assert c.catalog.assignments()["Fast"] == target
        done = records(c, kind="handover_phase", phase="COMPLETED")[0]["seq"]
        from_target = [r for r in records(c, topic="Fast", publisher=target) if r["seq"] < done]
        assert len(from_target) >= 10
        ids = [r["event_id"] for r in records(c, topic="Fast")]
        assert len(set(ids)) == 60  # dual detection repeats ids, never loses one

    def test_stateful_handover_carries_context(self):
        c = make_cluster(types=(AVG,))
        c.workers[c.owner_of("AvgSpeed")].request_relocation(["AvgSpeed"])
        feed(c, 120, 3500)
        c.run_until(20_000)
        assert phases(c, "AvgSpeed")[-1] == "COMPLETED"
        sent = records(c, kind="handover_phase", phase="STATE_TRANSFERRED")[0]
        got = records(c, kind="handover_phase", phase="DUAL_DETECTION")[0]
        assert sent["buffered_count"] > 0
        assert got["buffered_count"] is not None
        assert len({r["event_id"] for r in records(c, topic="AvgSpeed")}) == 120 // 4

    def test_zero_comparison_window_acknowledges_at_once(self):
        c = make_cluster(comparison_window=0)
        c.workers[c.owner_of("Fast")].request_relocation(["Fast"])
        feed(c, 30, 4000)
        c.run_until(8000)
        dual = records(c, kind="handover_phase", phase="DUAL_DETECTION")[0]
        update = [r for r in records(c, kind="assignment_update") if r["reason"] == "relocate"][0]
        assert update["time"] == dual["time"]

    def test_negative_comparison_window_rejected(self):
        with pytest.raises(ValueError):
            WorkerConfig(comparison_window=-1)

    def test_target_lost_during_dual_detection_aborts(self):
        c = make_cluster(comparison_window=1000)
        source = c.owner_of("Fast")
        c.workers[source].request_relocation(["Fast"])
        feed(c, 20, 4000)
        target = records(c, kind="relocation_proposal")[0]["target"]
        c.run_until(c.clock.now + 1)
        c.kill(target)
        feed(c, 80, 4000, first=20)
        c.run_until(20_000)
        assert phases(c, "Fast")[-1] == "ABORTED"
        assert c.owner_of("Fast") == source
        assert c.catalog.assignments()["Fast"] == source
        assert c.workers[source].counters["aborted"] == 1
        assert len({r["event_id"] for r in records(c, topic="Fast")}) == 100

    def test_store_outage_aborts_handover(self):
        c = make_cluster()
        source = c.owner_of("Fast")
        c.workers[source].request_relocation(["Fast"])
        c.store.available = False
        feed(c, 30, 4000)
        c.store.available = True
        c.run_until(10_000)
        aborted = records(c, kind="handover_phase", phase="ABORTED")
        assert aborted and c.owner_of("Fast") == source

    def test_ceiling_defers_scale_out(self):
        c = make_cluster(max_instances=1)
        w = c.workers[c.owner_of("Fast")]
        w.request_relocation(["Fast"])
        c.run_until(10_000)
        assert w.counters["deferred"] == 1
        assert w.owned() == ["Fast"] and len(c.live()) == 1


class TestLifecycle:
    def test_new_worker_reports_zero_load(self):
        c = make_cluster(types=())
        s = c.workers["w1"].snapshot()
        assert (s.F, s.IC, s.n_types, s.lifecycle, s.busy) == (0, 0, 0, ACTIVE, False)

    def test_idle_worker_terminates_after_grace(self):
        c = make_cluster(workers=2)
        idle = next(w for w in c.workers.values() if not w.owned())
        c.run_until(idle.started_at + 2000)
        assert idle.alive
        c.run_until(idle.started_at + 3000)
        assert idle.lifecycle == TERMINATED

    def test_lone_idle_worker_stays(self):
        c = make_cluster(types=())
        c.run_until(30_000)
        assert c.workers["w1"].alive

    def test_underloaded_worker_scales_in(self):
        c = make_cluster(types=(FAST, SLOW), workers=2, relocation={"max_flow": 1000, "min_flow": 5})
        assert sorted(c.catalog.assignments().values()) == ["w1", "w2"]
        feed(c, 100, 4000, step=500)
        c.run_until(60_000)
        assert [w.id for w in c.live()] == ["w2"]
        assert c.workers["w1"].lifecycle == TERMINATED
        assert set(c.catalog.assignments().values()) == {"w2"}
        update = [r for r in records(c, kind="assignment_update") if r["reason"] == "scale_in"]
        assert len(update) == 1

    def test_crash_orphans_then_catalog_reassigns(self):
        c = make_cluster(workers=1)
        feed(c, 20, 4000)
        c.kill("w1")
        c.run_until(c.clock.now + 5000)
        owner = c.catalog.assignments()["Fast"]
        assert owner not in (None, "w1") and c.workers[owner].alive


class TestDataPath:
    def test_duplicate_input_processed_once(self):
        c = make_cluster()
        w = c.workers[c.owner_of("Fast")]
        e = Event("Pos", "dup", 4000, {"speed": 90}, "producer")
        c.publish(e)
        c.publish(e)
        assert w.counters["detections"] == 1
        assert w.counters["duplicates"] == 1

    def test_evaluation_error_counted_and_skipped(self):
        c = make_cluster()
        w = c.workers[c.owner_of("Fast")]
        c.publish(Event("Pos", "bad", 4000, {"other": 1}, "producer"))
        c.publish(Event("Pos", "good", 4001, {"speed": 99}, "producer"))
        assert w.counters["errors"] == 1
        assert w.counters["detections"] == 1

    def test_checkpoint_every_n_events(self):
        c = make_cluster(types=(AVG,), checkpoint_every=10)
        w = c.workers[c.owner_of("AvgSpeed")]
        before = w.counters["checkpoints"]
        feed(c, 25, 4000)
        assert w.counters["checkpoints"] - before == 2

    def test_mid_window_state_is_buffered(self):
        c = make_cluster(types=(AVG,))
        w = c.workers[c.owner_of("AvgSpeed")]
        feed(c, 5, 4000)  # cars c0,c1,c2,c0,c1: nothing closes yet
        assert w.types["AvgSpeed"].state.buffered_count == 5

    def test_derived_events_feed_downstream_types(self):
        very = {"name": "VeryFast", "operator": "Filtering", "inputs": ["Fast"], "params": {"predicate": "speed > 95"}}
        c = make_cluster(types=(FAST, very))
        c.publish(Event("Pos", "a", 4000, {"speed": 90}, "producer"))
        c.publish(Event("Pos", "b", 4001, {"speed": 99}, "producer"))
        assert len(records(c, topic="VeryFast")) == 1
