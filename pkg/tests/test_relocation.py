import random

import pytest

from choreocep.context import ContextState
from choreocep.worker import (
    FlowMeter,
    HandoverError,
    HandoverSession,
    InstanceView,
    Phase,
    RelocationConfig,
    WorkerLoadSnapshot,
    choose_target_worker,
    monitor_tick,
    search_types_by_input_similarity,
    search_types_by_resource_usage,
)
from conftest import ev
from oracles import input_similarity_oracle


def ctx_with(n: int) -> ContextState:
    return ContextState(owner_type="T", partitions={"p": [ev("A", f"a{i}", i) for i in range(n)]} if n else {})


class TestInputSimilarity:
    def view(self, inputs, F):
        return InstanceView(event_types=inputs, flows={k: 10.0 for k in inputs}, F=F)

    def test_type_with_unshared_input_moves(self):
        inst = self.view({"A": ("x",), "B": ("x",), "C": ("y",)}, 30)
        assert search_types_by_input_similarity(inst, 25, random.Random(0)) == ["C"]

    def test_under_threshold_moves_nothing(self):
        inst = self.view({"A": ("x",), "B": ("x",), "C": ("y",)}, 10)
        assert search_types_by_input_similarity(inst, 25, random.Random(0)) == []

    def test_fully_shared_input_falls_back_to_random_picks(self):
        inst = self.view({"A": ("x",), "B": ("x",), "C": ("x",)}, 30)
        seen = set()
        for seed in range(20):
            chosen = search_types_by_input_similarity(inst, 15, random.Random(seed))
            assert len(chosen) == 2 and len(set(chosen)) == 2
            seen.add(tuple(sorted(chosen)))
        assert len(seen) > 1

    def test_stops_when_everything_selected(self):
        # flows too small to ever bring F under the threshold
        inst = InstanceView({"A": ("x",), "B": ("y",)}, {"A": 1.0, "B": 1.0}, F=100)
        assert sorted(search_types_by_input_similarity(inst, 10, random.Random(0))) == ["A", "B"]

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_oracle(self, seed):
        rng = random.Random(seed)
        inputs = [f"i{k}" for k in range(rng.randint(1, 6))]
        types = {f"T{k}": tuple(rng.sample(inputs, rng.randint(1, len(inputs)))) for k in range(rng.randint(2, 10))}
        flows = {k: rng.uniform(1, 50) for k in types}
        F = sum(flows.values()) * rng.uniform(0.5, 1.0)
        max_flow = F * rng.uniform(0.1, 1.1)
        got = search_types_by_input_similarity(InstanceView(types, flows, F), max_flow, random.Random(seed))
        assert got == input_similarity_oracle(types, flows, F, max_flow, random.Random(seed))


class TestResourceUsage:
    def run(self, IC, max_resource):
        inst = InstanceView({"A": ("x",), "B": ("x",), "C": ("y",)}, {}, F=0, IC=IC)
        contexts = {"A": ctx_with(50), "B": ctx_with(30), "C": ctx_with(10)}
        return search_types_by_resource_usage(inst, max_resource, contexts, per_event_cost=1, overhead=0)

    def test_biggest_consumer_first(self):
        assert self.run(100, 60) == ["A"]

    def test_under_limit_moves_nothing(self):
        assert self.run(40, 60) == []

    def test_keeps_going_until_under_limit(self):
        assert self.run(100, 10) == ["A", "B", "C"]

    def test_missing_context_consumes_nothing(self):
        inst = InstanceView({"A": ("x",), "B": ("x",)}, {}, F=0, IC=10)
        assert search_types_by_resource_usage(inst, 5, {"B": ctx_with(3)}) == ["B", "A"]


class TestChooseTarget:
    def snaps(self, **ics):
        return [WorkerLoadSnapshot(w, F=ic, IC=ic, n_types=1, timestamp=0) for w, ic in ics.items()]

    def test_least_loaded_that_fits(self):
        assert choose_target_worker(self.snaps(w1=50, w2=20), need=30, limit=60) == "w2"

    def test_none_when_all_full(self):
        assert choose_target_worker(self.snaps(w1=50, w2=40), need=30, limit=60) is None

    def test_tie_broken_by_id(self):
        assert choose_target_worker(self.snaps(w3=10, w2=10), need=5, limit=60) == "w2"

    def test_stale_snapshots_ignored(self):
        snaps = self.snaps(w1=0)
        assert choose_target_worker(snaps, 1, 60, now=10_000, max_age_ms=5_000) is None

    def test_flow_metric(self):
        snaps = [WorkerLoadSnapshot("w1", F=90, IC=0, n_types=1, timestamp=0),
                 WorkerLoadSnapshot("w2", F=10, IC=5, n_types=1, timestamp=0)]
        assert choose_target_worker(snaps, need=20, limit=100, metric="F") == "w2"


class TestMonitorTick:
    cfg = RelocationConfig(max_flow=100, min_flow=10)

    def test_overloaded_worker_relocates(self):
        inst = InstanceView({"A": ("x",), "B": ("y",)}, {"A": 80, "B": 60}, F=140)
        action = monitor_tick(inst, self.cfg, alive_workers=1, rng=random.Random(0))
        assert action.kind == "initiate_relocation" and action.types == ["A"]

    def test_underloaded_worker_scales_in_only_with_peers(self):
        inst = InstanceView({"A": ("x",)}, {"A": 1}, F=1)
        assert monitor_tick(inst, self.cfg, 2, random.Random(0)).kind == "initiate_scale_in"
        assert monitor_tick(inst, self.cfg, 1, random.Random(0)).kind == "none"

    def test_normal_load_does_nothing(self):
        inst = InstanceView({"A": ("x",)}, {"A": 50}, F=50)
        assert monitor_tick(inst, self.cfg, 3, random.Random(0)).kind == "none"

    def test_resource_strategy(self):
        cfg = RelocationConfig(max_flow=100, min_flow=10, max_resource=20, strategy="resource_usage")
        inst = InstanceView({"A": ("x",), "B": ("y",)}, {"A": 50, "B": 50}, F=50, IC=32)
        action = monitor_tick(inst, cfg, 1, random.Random(0), contexts=lambda: {"A": ctx_with(5), "B": ctx_with(25)})
        assert action.types == ["B"]

    @pytest.mark.parametrize(
        "kwargs",
        [{"min_flow": 200}, {"max_flow": 0}, {"strategy": "hybrid"}, {"monitor_period_ms": 0}],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            RelocationConfig(**kwargs)


class TestHandoverSession:
    def session(self, window=3):
        return HandoverSession("w1-p1", "A", "w1", "w2", comparison_window=window)

    def test_happy_path(self):
        s = self.session()
        for p in (Phase.STATE_TRANSFERRED, Phase.DUAL_DETECTION, Phase.ACKNOWLEDGED, Phase.COMPLETED):
            s.advance(p)
        assert s.phase.terminal

    def test_skipping_a_phase_is_illegal(self):
        s = self.session()
        with pytest.raises(HandoverError):
            s.advance(Phase.DUAL_DETECTION)

    def test_abort_records_reason_and_is_final(self):
        s = self.session()
        s.abort("timeout")
        assert s.phase is Phase.ABORTED and s.abort_reason == "timeout"
        with pytest.raises(HandoverError):
            s.abort("again")

    def test_compare_prefix(self):
        s = self.session()
        s.own_outputs = ["a", "b"]
        s.target_outputs = ["a"]
        assert s.compare() is None
        s.target_outputs.append("b")
        s.own_outputs.append("c")
        s.target_outputs.append("c")
        assert s.compare() is True

    def test_compare_mismatch(self):
        s = self.session()
        s.own_outputs = ["a", "b"]
        s.target_outputs = ["a", "x"]
        assert s.compare() is False

    def test_zero_window_agrees_immediately(self):
        assert self.session(window=0).compare() is True


class TestFlowMeter:
    def test_constant_rate_converges(self):
        m = FlowMeter(window_ms=5000)
        n = 0
        for _ in range(60):
            for _ in range(20):
                m.count("A", f"e{n}")
                n += 1
            m.sample(1000)
        assert m.rate("A") == pytest.approx(20.0, rel=1e-3)

    def test_step_reflected_63_percent_after_one_window(self):
        m = FlowMeter(window_ms=5000)
        for k in range(5):
            for i in range(100):
                m.count("A", f"{k}-{i}")
            m.sample(1000)
        assert m.rate("A") == pytest.approx(100 * (1 - 2.718281828 ** -1), rel=1e-3)

    def test_repeated_id_counted_once(self):
        m = FlowMeter()
        m.count("A", "e1")
        m.count("A", "e1")
        m.sample(5000)
        assert m.rate("A") == pytest.approx(0.2 * (1 - 2.718281828 ** -1), rel=1e-3)

    def test_total_counts_each_topic_once(self):
        m = FlowMeter()
        m.seed("A", 10)
        m.seed("B", 5)
        assert m.total(["A", "A", "B"]) == 15
        m.forget("A")
        assert m.total(["A", "B"]) == 5

    def test_window_must_be_positive(self):
        with pytest.raises(ValueError):
            FlowMeter(0)
