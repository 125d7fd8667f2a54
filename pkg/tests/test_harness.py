import json
import random

import pytest

from choreocep import evaluate, new_state
from choreocep.catalog import Catalog
from choreocep.definitions import Operator
from choreocep.events import Event
from choreocep.harness import (
    METRICS_HEADER,
    PRIMITIVE_TYPES,
    Cluster,
    InputMismatchError,
    RampProfile,
    ScenarioConfig,
    ScenarioError,
    Trace,
    TraceFormatError,
    build_metrics,
    build_ridesharing_catalog,
    generate_ridesharing,
    load_scenario,
    percentile,
    poisson_times,
    read_metrics_csv,
    reference_config,
    replay_compare,
    run_scenario,
    scenario_events,
)
from choreocep.worker import WorkerConfig
from conftest import SCENARIOS

SHORT = {
    "name": "short",
    "duration_s": 30,
    "ramp": [[0, 3]],
    "seed": 5,
    "initial_workers": 2,
    "relocation": {"max_flow": 1000, "min_flow": 1},
}


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    cfg = ScenarioConfig.from_dict(SHORT)
    return run_scenario(cfg, out_dir=out), out


class TestScenarioConfig:
    def test_shipped_scenarios_load(self):
        names = sorted(p.stem for p in SCENARIOS.glob("*.json"))
        assert names == ["failure", "flat", "handovers", "ramp"]
        for p in SCENARIOS.glob("*.json"):
            load_scenario(p)

    def test_unknown_field_rejected(self):
        with pytest.raises(ScenarioError, match="colour"):
            ScenarioConfig.from_dict({**SHORT, "colour": "red"})

    def test_all_problems_reported(self):
        with pytest.raises(ScenarioError) as info:
            ScenarioConfig(duration_s=-1, ramp=[[0, -2]], initial_workers=0)
        assert len(info.value.problems) == 3

    @pytest.mark.parametrize(
        "fault",
        [
            {"time_s": 1, "action": "explode"},
            {"time_s": 1, "action": "kill"},
            {"time_s": 1, "action": "kill", "worker": "w1", "owner_of": "X"},
            {"time_s": 1, "action": "drop_rate", "rate": 2},
            {"action": "drop_rate", "rate": 0.1},
        ],
    )
    def test_bad_faults(self, fault):
        with pytest.raises(ScenarioError):
            ScenarioConfig(faults=[fault])

    def test_bad_relocation_override(self):
        with pytest.raises(ScenarioError, match="min_flow"):
            ScenarioConfig(relocation={"max_flow": 10, "min_flow": 20})

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ScenarioError):
            load_scenario(p)

    def test_reference_config_strips_balancing_and_faults(self):
        cfg = load_scenario(SCENARIOS / "failure.json")
        ref = reference_config(cfg)
        assert ref.initial_workers == 1 and ref.faults == [] and ref.forced_relocations == []
        assert ref.relocation["max_flow"] >= 1e12
        assert scenario_events(ref) == scenario_events(cfg)


class TestMetrics:
    def test_nearest_rank(self):
        values = list(range(1, 11))
        assert percentile(values, 50) == 5
        assert percentile(values, 95) == 10
        assert percentile(values, 0) == 1
        assert percentile([7], 99) == 7

    def test_percentile_errors(self):
        with pytest.raises(ValueError):
            percentile([], 50)
        with pytest.raises(ValueError):
            percentile([1], 101)

    def test_build_metrics_buckets_by_second(self):
        dets = [
            {"event_id": "a", "topic": "X", "occurrence_time": 100, "publish_time": 150},
            {"event_id": "a", "topic": "X", "occurrence_time": 100, "publish_time": 900},  # duplicate
            {"event_id": "b", "topic": "Y", "occurrence_time": 1000, "publish_time": 1010},
        ]
        rows = build_metrics(dets, [(0, 1), (1500, 2)], [1200])
        by = {(r.timestamp, r.type): r for r in rows}
        assert by[(0, "X")].p50 == 50 and by[(0, "X")].throughput == 1
        assert by[(0, "*")].instances == 1 and by[(0, "*")].relocations == 0
        assert by[(1, "Y")].p99 == 10
        assert by[(1, "*")].instances == 2 and by[(1, "*")].relocations == 1

    def test_csv_header(self, short_run):
        _, out = short_run
        rows = read_metrics_csv(out / "metrics.csv")
        assert tuple(rows[0].keys()) == METRICS_HEADER
        assert all(int(r["instances"]) >= 1 for r in rows)

    def test_latency_percentiles_ordered(self, short_run):
        result, _ = short_run
        for r in result.metrics:
            if r.p50 is not None:
                assert r.p50 <= r.p95 <= r.p99


class TestTraces:
    def test_outputs_written(self, short_run):
        result, out = short_run
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert manifest["input_digest"] == result.trace.header["input_digest"]
        assert manifest["summary"]["input_events"] == len(result.events)

    def test_trace_round_trip(self, short_run):
        result, out = short_run
        loaded = Trace.load(out / "trace.jsonl")
        assert loaded.header == result.trace.header
        assert len(loaded.records) == len(result.trace.records)

    def test_compare_with_itself(self, short_run):
        _, out = short_run
        assert replay_compare(out / "trace.jsonl", out / "trace.jsonl").empty

    def test_different_inputs_refused(self, short_run):
        result, _ = short_run
        other = run_scenario(ScenarioConfig.from_dict({**SHORT, "seed": 6, "duration_s": 5}))
        with pytest.raises(InputMismatchError):
            replay_compare(result.trace, other.trace)

    def test_missing_digest_refused(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text('{"record": "header"}\n')
        with pytest.raises(InputMismatchError):
            replay_compare(p, p)

    def test_corrupt_trace(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text("{broken\n")
        with pytest.raises(TraceFormatError):
            Trace.load(p)

    def test_runs_are_reproducible(self, short_run):
        result, _ = short_run
        again = run_scenario(ScenarioConfig.from_dict(SHORT))
        assert again.trace.records == result.trace.records

    def test_duplicate_delivery_does_not_change_detections(self, short_run):
        result, _ = short_run
        cfg = ScenarioConfig.from_dict({**SHORT, "faults": [{"time_s": 0, "action": "duplicate_rate", "rate": 0.3}]})
        noisy = run_scenario(cfg)
        assert noisy.counters["duplicates"] > 0
        assert replay_compare(result.trace, noisy.trace).empty

    def test_diff_notices_lost_messages(self, short_run):
        result, _ = short_run
        cfg = ScenarioConfig.from_dict({**SHORT, "faults": [{"time_s": 10, "action": "drop_rate", "rate": 0.5}]})
        lossy = run_scenario(cfg)
        report = replay_compare(result.trace, lossy.trace)
        assert report.only_a and not report.empty


class TestRidesharing:
    def test_catalog_is_acyclic_and_covers_every_operator(self):
        cat = Catalog()
        for p in PRIMITIVE_TYPES:
            cat.declare_primitive(p)
        defs = build_ridesharing_catalog()
        for d in defs:
            cat.register_event_type(d)
        assert cat.dependency_graph().is_acyclic()
        assert len(defs) >= 8
        assert {d.operator for d in defs} == set(Operator)

    def test_driver_average_grade(self):
        defs = {d.name: d for d in build_ridesharing_catalog()}
        c = Cluster(WorkerConfig(), seed=0)
        c.spawn()
        c.settle()
        c.register(defs.values())
        seen = []
        c.bus.subscribe("DriverAvgGrade", "observer", seen.append)
        for i, g in enumerate([4, 5, 3]):
            c.publish(Event("DriverGrade", f"g{i}", 1000 + i, {"driver_id": "d1", "grade": g, "ride_id": f"r{i}"}))
        assert [m.payload.attributes for m in seen] == [{"driver_id": "d1", "avg_grade": 4.0}]

    def test_unavailable_driver_never_offered(self):
        offer = next(d for d in build_ridesharing_catalog() if d.name == "AvailableDriverOffer")
        events = generate_ridesharing(RampProfile([[0, 5]]), 60, seed=2)
        state = new_state(offer)
        passed = 0
        for e in events:
            if e.event_type != "DriverResponse":
                continue
            out, state = evaluate(offer, e, state)
            for d in out:
                assert d.attributes["available"] is True
                passed += 1
        assert passed > 0

    def test_generator_is_deterministic_and_ordered(self):
        a = generate_ridesharing(RampProfile([[0, 4]]), 30, seed=1)
        b = generate_ridesharing(RampProfile([[0, 4]]), 30, seed=1)
        assert a == b
        times = [e.occurrence_time for e in a]
        assert times == sorted(times) and max(times) < 30_000
        assert len({e.event_id for e in a}) == len(a)

    def test_ramp_interpolates(self):
        r = RampProfile([[0, 2], [10, 12]])
        assert (r.rate(-1), r.rate(5), r.rate(20)) == (2, 7, 12)
        with pytest.raises(ValueError):
            RampProfile([])

    def test_poisson_count_matches_rate(self):
        times = poisson_times(RampProfile([[0, 10]]), 1000, 1.0, random.Random(3))
        assert abs(len(times) - 10_000) < 400  # four standard deviations
