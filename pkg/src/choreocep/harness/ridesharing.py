"""The ridesharing workload: event types and a seeded synthetic stream.

A ride starts with a ``RideCall``; two drivers answer with
``DriverResponse``; if one of them is available and suits the client the
trip goes ahead (``TripStart``, ``TripEnd``) and both sides grade each
other. Drivers also report ``VehiclePosition`` continuously. Ride calls
arrive as a Poisson process whose rate follows a piecewise-linear profile.
"""

from __future__ import annotations

import bisect
import heapq
import random
from typing import Sequence

from ..definitions import EventTypeDefinition
from ..events import Event

PRIMITIVE_TYPES = (
    "RideCall",
    "DriverResponse",
    "TripStart",
    "TripEnd",
    "DriverGrade",
    "ClientGrade",
    "VehiclePosition",
)

CATEGORIES = ("economy", "comfort")
AREA = 100.0  # side of the square city, in grid units


def client_preferences(n_clients: int, seed: int = 0) -> dict[str, dict]:
    rng = random.Random(f"prefs:{seed}")
    return {
        f"c{i}": {"pref_category": rng.choice(CATEGORIES), "vip": rng.random() < 0.1}
        for i in range(n_clients)
    }


def build_ridesharing_catalog(n_clients: int = 200, seed: int = 0) -> list[EventTypeDefinition]:
    """Derived event types in dependency order."""
    docs = [
        {
            "name": "EnrichedRideCall",
            "operator": "Enrichment",
            "inputs": ["RideCall"],
            "params": {"key": "client_id", "table": client_preferences(n_clients, seed)},
        },
        {
            "name": "AvailableDriverOffer",
            "operator": "Filtering",
            "inputs": ["DriverResponse"],
            "params": {"predicate": "available == true and matches_preference == true"},
        },
        {
            "name": "RideMatch",
            "operator": "Composition",
            "inputs": ["EnrichedRideCall", "AvailableDriverOffer"],
            "params": {"within_ms": 10_000},
            "context": {"kind": "semantic", "partition_key": "ride_id"},
        },
        {
            "name": "LateArrival",
            "operator": "PatternDetection",
            "inputs": ["RideMatch", "TripStart"],
            "params": {
                "sequence": [
                    {"type": "RideMatch"},
                    {"type": "TripStart", "predicate": "pickup_delay_s > 540"},
                ],
                "within_ms": 60_000,
            },
            "context": {"kind": "semantic", "partition_key": "ride_id"},
        },
        {
            "name": "SuccessfulDelivery",
            "operator": "PatternDetection",
            "inputs": ["RideMatch", "TripStart", "TripEnd"],
            "params": {
                "sequence": [
                    {"type": "RideMatch"},
                    {"type": "TripStart"},
                    {"type": "TripEnd", "predicate": "status == 'completed'"},
                ],
                "within_ms": 120_000,
            },
            "context": {"kind": "semantic", "partition_key": "ride_id"},
        },
        {
            "name": "DriverAvgGrade",
            "operator": "Aggregation",
            "inputs": ["DriverGrade"],
            "params": {"function": "avg", "attribute": "grade", "output": "avg_grade"},
            "context": {
                "kind": "semantic",
                "partition_key": "driver_id",
                "window": {"mode": "sliding", "count": 3},
            },
        },
        {
            "name": "ClientAvgGrade",
            "operator": "Aggregation",
            "inputs": ["ClientGrade"],
            "params": {"function": "avg", "attribute": "grade", "output": "avg_grade"},
            "context": {
                "kind": "semantic",
                "partition_key": "client_id",
                "window": {"mode": "sliding", "count": 3},
            },
        },
        {
            "name": "SpeedingDriver",
            "operator": "Filtering",
            "inputs": ["VehiclePosition"],
            "params": {"predicate": "speed > 80"},
        },
        {
            "name": "RideCallSummary",
            "operator": "Projection",
            "inputs": ["RideCall"],
            "params": {"keep": ["ride_id", "client_id", "category"]},
        },
        {
            "name": "TripFare",
            "operator": "Translation",
            "inputs": ["TripEnd"],
            "params": {
                "rules": [
                    {"op": "mul", "source": "distance_km", "target": "fare", "value": 1.6},
                    {"op": "upper", "source": "status", "target": "status"},
                ]
            },
        },
        {
            "name": "GradeBand",
            "operator": "Division",
            "inputs": ["DriverGrade"],
            "params": {
                "branches": [
                    {"name": "low", "predicate": "grade <= 2"},
                    {"name": "high", "predicate": "grade >= 4"},
                ]
            },
        },
        {
            "name": "ZoneDemand",
            "operator": "Aggregation",
            "inputs": ["RideCall"],
            "params": {"function": "count", "output": "calls"},
            "context": {
                "kind": "spatial",
                "grid": {"cell": AREA / 2, "x": "x", "y": "y"},
                "window": {"mode": "sliding", "count": 3},
            },
        },
    ]
    return [EventTypeDefinition.from_dict(d) for d in docs]


class RampProfile:
    """Piecewise-linear rate (rides/second) over time (seconds)."""

    def __init__(self, points: Sequence[Sequence[float]]) -> None:
        pts = sorted((float(t), float(r)) for t, r in points)
        if not pts:
            raise ValueError("ramp needs at least one point")
        if any(r < 0 for _, r in pts):
            raise ValueError("ramp rates must be >= 0")
        self.times = [t for t, _ in pts]
        self.rates = [r for _, r in pts]

    def rate(self, t: float) -> float:
        if t <= self.times[0]:
            return self.rates[0]
        if t >= self.times[-1]:
            return self.rates[-1]
        i = bisect.bisect_right(self.times, t)
        t0, t1 = self.times[i - 1], self.times[i]
        r0, r1 = self.rates[i - 1], self.rates[i]
        return r0 + (r1 - r0) * (t - t0) / (t1 - t0)

    @property
    def peak(self) -> float:
        return max(self.rates)


def poisson_times(profile: RampProfile, duration_s: float, scale: float, rng: random.Random) -> list[float]:
    """Arrival times (s) of a Poisson process with rate ``scale * profile(t)``, by thinning."""
    lam_max = scale * profile.peak
    out: list[float] = []
    if lam_max <= 0:
        return out
    t = 0.0
    while True:
        t += rng.expovariate(lam_max)
        if t >= duration_s:
            return out
        if rng.random() * lam_max < scale * profile.rate(t):
            out.append(t)


def generate_ridesharing(
    profile: RampProfile,
    duration_s: float,
    n_clients: int = 200,
    n_drivers: int = 50,
    seed: int = 0,
    positions_per_ride: float = 3.0,
) -> list[Event]:
    """Producer events ordered by occurrence time, all before ``duration_s``."""
    rng = random.Random(f"rides:{seed}")
    pos_rng = random.Random(f"positions:{seed}")
    heap: list[tuple[int, int, str, dict]] = []
    order = 0

    def emit(t_s: float, etype: str, attrs: dict) -> None:
        nonlocal order
        t_ms = int(t_s * 1000)
        if t_s < duration_s:
            heapq.heappush(heap, (t_ms, order, etype, attrs))
            order += 1

    for n, t in enumerate(poisson_times(profile, duration_s, 1.0, rng)):
        ride = f"r{n}"
        client = f"c{rng.randrange(n_clients)}"
        x, y = round(rng.uniform(0, AREA), 2), round(rng.uniform(0, AREA), 2)
        emit(t, "RideCall", {"ride_id": ride, "client_id": client, "x": x, "y": y,
                             "category": rng.choice(CATEGORIES)})
        chosen = None
        for k in range(2):
            driver = f"d{rng.randrange(n_drivers)}"
            available = rng.random() < 0.8
            suits = rng.random() < 0.8
            emit(t + rng.uniform(0.5, 3.0), "DriverResponse", {
                "ride_id": ride, "driver_id": driver, "available": available,
                "matches_preference": suits, "eta_s": rng.randrange(60, 900),
            })
            if available and suits and chosen is None:
                chosen = driver
        if chosen is None:
            continue
        start = t + rng.uniform(5.0, 20.0)
        emit(start, "TripStart", {"ride_id": ride, "driver_id": chosen, "client_id": client,
                                  "pickup_delay_s": rng.randrange(0, 900)})
        end = start + rng.uniform(20.0, 60.0)
        status = "completed" if rng.random() < 0.9 else "cancelled"
        emit(end, "TripEnd", {"ride_id": ride, "driver_id": chosen, "client_id": client,
                              "status": status, "distance_km": round(rng.uniform(1, 30), 1)})
        emit(end + rng.uniform(1.0, 5.0), "DriverGrade",
             {"ride_id": ride, "driver_id": chosen, "grade": rng.randint(1, 5)})
        emit(end + rng.uniform(1.0, 5.0), "ClientGrade",
             {"ride_id": ride, "client_id": client, "grade": rng.randint(1, 5)})

    for t in poisson_times(profile, duration_s, positions_per_ride, pos_rng):
        emit(t, "VehiclePosition", {
            "driver_id": f"d{pos_rng.randrange(n_drivers)}",
            "x": round(pos_rng.uniform(0, AREA), 2),
            "y": round(pos_rng.uniform(0, AREA), 2),
            "speed": round(pos_rng.uniform(0, 120), 1),
        })

    events = []
    counts: dict[str, int] = {}
    while heap:
        t_ms, _, etype, attrs = heapq.heappop(heap)
        counts[etype] = counts.get(etype, 0) + 1
        events.append(Event(etype, f"{etype}-{counts[etype]}", t_ms, attrs, "producer"))
    return events


def expected_flow(rides_per_s: float, positions_per_ride: float = 3.0) -> float:
    """Rough single-worker input flow (events/s) for a given ride rate."""
    trip = 1 - (1 - 0.64) ** 2
    raw = 1 + 2 + 4 * trip + positions_per_ride
    derived_inputs = 1 + 2 * 0.64 + 2 * 0.64  # enriched calls, offers, matches
    return rides_per_s * (raw + derived_inputs)
