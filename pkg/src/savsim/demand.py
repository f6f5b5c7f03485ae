"""Stochastic trip synthesis: Poisson counts per OD cell, empirical departure
minutes, Bernoulli willingness to share."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .router import SkimSet
from .scenario import MINUTES_PER_DAY, Scenario, ScenarioError, SimConfig


@dataclass
class TripRequest:
    id: int
    origin: str
    dest: str
    request_minute: float  # minute of day, integral
    willing_to_share: bool
    direct_time: float  # minutes, skim at the request minute
    direct_dist: float  # miles, incl. intra-zonal floor
    # Outcome fields filled by the engine.
    state: str = "waiting"  # waiting | onboard | served | abandoned
    wait_minutes: float | None = None
    pickup_minute: float | None = None
    dropoff_minute: float | None = None
    pooled: bool = False
    vehicle_id: int | None = None


@dataclass(frozen=True)
class DepartureHistogram:
    """Equal-width departure-minute bins over one day; probabilities sum to 1."""

    bin_starts: tuple[int, ...]
    probabilities: tuple[float, ...]

    def validate(self) -> None:
        if len(self.bin_starts) != len(self.probabilities):
            raise ScenarioError("histogram bins and probabilities differ in length")
        if not self.bin_starts or self.bin_starts[0] != 0:
            raise ScenarioError("histogram must start at minute 0")
        if any(p < 0 for p in self.probabilities):
            raise ScenarioError("histogram probabilities must be non-negative")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ScenarioError("histogram probabilities must sum to 1")
        width = MINUTES_PER_DAY // len(self.bin_starts)
        if width * len(self.bin_starts) != MINUTES_PER_DAY:
            raise ScenarioError("bin count must divide the day evenly")
        if list(self.bin_starts) != [i * width for i in range(len(self.bin_starts))]:
            raise ScenarioError("bins must be equal-width and contiguous")

    def per_minute_weights(self) -> np.ndarray:
        """Length-1440 relative weight per departure minute."""
        self.validate()
        width = MINUTES_PER_DAY // len(self.bin_starts)
        return np.repeat(np.asarray(self.probabilities) / width, width)


# Hourly weights with morning and evening commute peaks; normalized below.
_DEFAULT_HOURLY = (
    0.5, 0.3, 0.2, 0.2, 0.3, 1.5, 4.0, 7.5, 7.5, 4.5, 3.5, 4.0,
    4.5, 4.5, 5.0, 6.5, 8.0, 8.0, 6.0, 4.5, 3.5, 2.5, 1.5, 1.0,
)


def default_departure_histogram() -> DepartureHistogram:
    total = sum(_DEFAULT_HOURLY)
    return DepartureHistogram(
        bin_starts=tuple(h * 60 for h in range(24)),
        probabilities=tuple(w / total for w in _DEFAULT_HOURLY),
    )


def write_histogram(hist: DepartureHistogram, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin_start_minute", "probability"))
        for start, p in zip(hist.bin_starts, hist.probabilities):
            w.writerow((start, repr(p)))


def read_histogram(path: str | Path) -> DepartureHistogram:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    hist = DepartureHistogram(
        bin_starts=tuple(int(r["bin_start_minute"]) for r in rows),
        probabilities=tuple(float(r["probability"]) for r in rows),
    )
    hist.validate()
    return hist


def intrazonal_distance(scenario: Scenario, config: SimConfig, zone_id: str) -> float:
    return config.intrazonal_dist_factor * math.sqrt(scenario.zones[zone_id].area)


def synthesize_trips(
    scenario: Scenario,
    config: SimConfig,
    skims: SkimSet,
    seed: int,
    hist: DepartureHistogram | None = None,
) -> list[TripRequest]:
    """Draw one day of trips. Same scenario/config/seed -> identical list.

    Per OD cell of each period: count ~ Poisson(MP x mean); departure minutes
    from the histogram restricted to the period window and renormalized;
    willingness ~ Bernoulli(WS). Cells are visited in sorted order so the
    stream of RNG draws is reproducible.
    """
    config.validate()
    if hist is None:
        hist = default_departure_histogram()
    weights = hist.per_minute_weights()
    rng = np.random.default_rng(seed)
    mp = config.market_penetration
    ws = config.willingness_to_share

    trips: list[TripRequest] = []
    next_id = 0
    for pid, start, end in scenario.schedule.periods:
        window = weights[start:end]
        total_w = window.sum()
        probs = None
        if total_w > 0:
            probs = window / total_w
        minutes_range = np.arange(start, end)
        for (o, d) in sorted(scenario.od[pid].entries):
            lam = mp * scenario.od[pid].entries[(o, d)]
            count = int(rng.poisson(lam))
            if count == 0:
                continue
            if probs is None:
                raise ScenarioError(
                    f"period {pid} has zero departure-histogram mass but demand"
                )
            minutes = rng.choice(minutes_range, size=count, p=probs)
            willing = rng.random(count) < ws
            for m, w in zip(minutes, willing):
                tt, dist = skims.lookup(o, d, float(m))
                if o == d:
                    dist = max(dist, intrazonal_distance(scenario, config, o))
                trips.append(
                    TripRequest(
                        id=next_id,
                        origin=o,
                        dest=d,
                        request_minute=float(m),
                        willing_to_share=bool(w),
                        direct_time=tt,
                        direct_dist=dist,
                    )
                )
                next_id += 1
    return trips


def write_trips(trips: list[TripRequest], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            (
                "id",
                "origin",
                "dest",
                "request_minute",
                "willing_to_share",
                "direct_time",
                "direct_dist",
                "state",
                "wait_minutes",
                "pickup_minute",
                "dropoff_minute",
                "pooled",
                "vehicle_id",
            )
        )
        for t in trips:
            w.writerow(
                (
                    t.id,
                    t.origin,
                    t.dest,
                    repr(t.request_minute),
                    "true" if t.willing_to_share else "false",
                    repr(t.direct_time),
                    repr(t.direct_dist),
                    t.state,
                    "" if t.wait_minutes is None else repr(t.wait_minutes),
                    "" if t.pickup_minute is None else repr(t.pickup_minute),
                    "" if t.dropoff_minute is None else repr(t.dropoff_minute),
                    "true" if t.pooled else "false",
                    "" if t.vehicle_id is None else t.vehicle_id,
                )
            )


def read_trips(path: str | Path) -> list[TripRequest]:
    trips: list[TripRequest] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trips.append(
                TripRequest(
                    id=int(row["id"]),
                    origin=row["origin"],
                    dest=row["dest"],
                    request_minute=float(row["request_minute"]),
                    willing_to_share=row["willing_to_share"] == "true",
                    direct_time=float(row["direct_time"]),
                    direct_dist=float(row["direct_dist"]),
                    state=row["state"],
                    wait_minutes=float(row["wait_minutes"]) if row["wait_minutes"] else None,
                    pickup_minute=float(row["pickup_minute"]) if row["pickup_minute"] else None,
                    dropoff_minute=float(row["dropoff_minute"]) if row["dropoff_minute"] else None,
                    pooled=row["pooled"] == "true",
                    vehicle_id=int(row["vehicle_id"]) if row["vehicle_id"] else None,
                )
            )
    return trips
