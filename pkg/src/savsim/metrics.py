"""Fleet performance metrics and independent event-log audits.

The headline measures are computed from metered-day outcomes only:

* served trips per vehicle: served trips / fleet size (undefined for an
  empty fleet, which is flagged rather than faked);
* percent pooled: riders whose ride was pooled / riders generated willing to
  share, as a percentage in [0, 100];
* percent extra mileage: (driven - demanded) / demanded as a percentage,
  where demanded sums the direct distances of served trips and driven sums
  every mile the fleet actually moved, empty or occupied.

The audit helpers replay a serialized event log with nothing but the log,
the trip table, and the network skims, re-deriving mileage, occupancy,
pooling, and detours from scratch. They are deliberately independent of the
simulator internals so a log cannot pass by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .demand import TripRequest, intrazonal_distance
from .engine import Event, SimulationResult
from .router import SkimSet
from .scenario import Scenario, SimConfig


@dataclass
class PerformanceMetrics:
    fleet_size: int
    generated: int
    served: int
    abandoned: int
    still_waiting: int
    willing: int
    pooled: int
    vmt_empty: float
    vmt_occupied: float
    demanded_miles: float
    trips_per_sav: float | None
    pct_pooled: float
    pct_extra_vmt: float | None
    mean_wait_served: float | None
    flags: tuple[str, ...] = ()

    @property
    def vmt_total(self) -> float:
        return self.vmt_empty + self.vmt_occupied


def compute_performance(result: SimulationResult) -> PerformanceMetrics:
    trips = result.trips
    served = [t for t in trips if t.state == "served"]
    abandoned = sum(1 for t in trips if t.state == "abandoned")
    still_waiting = sum(1 for t in trips if t.state == "waiting")
    willing = sum(1 for t in trips if t.willing_to_share)
    pooled = sum(1 for t in trips if t.pooled)

    vmt_empty = sum(e.miles for e in result.events if e.kind == "arrive" and not e.occupied)
    vmt_occupied = sum(e.miles for e in result.events if e.kind == "arrive" and e.occupied)
    demanded = sum(t.direct_dist for t in served)

    flags: list[str] = []
    if result.fleet_size == 0:
        flags.append("fleet_size_zero")
        trips_per_sav = None
    else:
        trips_per_sav = len(served) / result.fleet_size
    if willing == 0:
        flags.append("no_willing_riders")
        pct_pooled = 0.0
    else:
        pct_pooled = 100.0 * pooled / willing
    if demanded <= 0:
        flags.append("no_served_demand")
        pct_extra = None
    else:
        pct_extra = 100.0 * (vmt_empty + vmt_occupied - demanded) / demanded
    mean_wait = (
        sum(t.wait_minutes for t in served) / len(served) if served else None
    )
    return PerformanceMetrics(
        fleet_size=result.fleet_size,
        generated=len(trips),
        served=len(served),
        abandoned=abandoned,
        still_waiting=still_waiting,
        willing=willing,
        pooled=pooled,
        vmt_empty=vmt_empty,
        vmt_occupied=vmt_occupied,
        demanded_miles=demanded,
        trips_per_sav=trips_per_sav,
        pct_pooled=pct_pooled,
        pct_extra_vmt=pct_extra,
        mean_wait_served=mean_wait,
        flags=tuple(flags),
    )


PERFORMANCE_COLUMNS = (
    "city_id",
    "fleet_size",
    "generated",
    "served",
    "abandoned",
    "still_waiting",
    "willing",
    "pooled",
    "vmt_empty",
    "vmt_occupied",
    "demanded_miles",
    "trips_per_sav",
    "pct_pooled",
    "pct_extra_vmt",
    "mean_wait_served",
    "flags",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def performance_row(city_id: str, m: PerformanceMetrics) -> dict[str, str]:
    return {
        "city_id": city_id,
        "fleet_size": _fmt(m.fleet_size),
        "generated": _fmt(m.generated),
        "served": _fmt(m.served),
        "abandoned": _fmt(m.abandoned),
        "still_waiting": _fmt(m.still_waiting),
        "willing": _fmt(m.willing),
        "pooled": _fmt(m.pooled),
        "vmt_empty": _fmt(m.vmt_empty),
        "vmt_occupied": _fmt(m.vmt_occupied),
        "demanded_miles": _fmt(m.demanded_miles),
        "trips_per_sav": _fmt(m.trips_per_sav),
        "pct_pooled": _fmt(m.pct_pooled),
        "pct_extra_vmt": _fmt(m.pct_extra_vmt),
        "mean_wait_served": _fmt(m.mean_wait_served),
        "flags": ";".join(m.flags),
    }


def write_performance_csv(rows: list[dict[str, str]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(PERFORMANCE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row[c] for c in PERFORMANCE_COLUMNS) + "\n")


# ---------------------------------------------------------------------------
# Event-log replay audits

@dataclass
class LogReplay:
    """Facts re-derived from an event log alone."""

    vmt_empty: float
    vmt_occupied: float
    per_vehicle_miles: dict[int, tuple[float, float]]  # id -> (empty, occupied)
    pickup_minute: dict[int, float]
    dropoff_minute: dict[int, float]
    trip_vehicle: dict[int, int]
    pooled_trip_ids: set[int]
    violations: list[str] = field(default_factory=list)


def replay_log(
    events: list[Event],
    trips: list[TripRequest],
    scenario: Scenario,
    config: SimConfig,
    skims: SkimSet,
) -> LogReplay:
    """Full structural replay of a serialized log.

    Re-checks, per vehicle: chronological ordering, zone continuity, mileage
    of every arrival against the skim distances (zero or the intra-zonal
    floor for same-zone hops, floor miles exactly when the hop delivers a
    same-zone trip), occupancy flags against reconstructed onboard sets, and
    the two-rider capacity. Pooling is re-derived as strictly positive
    overlap of two riders' pickup-to-dropoff spans on the same vehicle.
    """
    zid = {z: i for i, z in enumerate(skims.zone_ids)}
    intra = {z: intrazonal_distance(scenario, config, z) for z in skims.zone_ids}
    trip_by_id = {t.id: t for t in trips}
    v: list[str] = []

    by_vehicle: dict[int, list[Event]] = {}
    for e in events:
        by_vehicle.setdefault(e.vehicle, []).append(e)

    vmt_empty = 0.0
    vmt_occupied = 0.0
    per_vehicle: dict[int, tuple[float, float]] = {}
    pickup_minute: dict[int, float] = {}
    dropoff_minute: dict[int, float] = {}
    trip_vehicle: dict[int, int] = {}
    pooled: set[int] = set()

    for vid, evs in sorted(by_vehicle.items()):
        last_minute = None
        zone: str | None = None
        onboard: list[int] = []
        leg_from: str | None = None
        leg_occupied: bool | None = None
        ve = vo = 0.0
        rider_spans: dict[int, list[float]] = {}
        for i, e in enumerate(evs):
            if last_minute is not None and e.minute < last_minute - 1e-12:
                v.append(f"vehicle {vid}: event at {e.minute} before {last_minute}")
            last_minute = e.minute if last_minute is None else max(e.minute, last_minute)
            if zone is None and e.kind != "spawn":
                # The log opens mid-history: the fleet predates its first
                # recorded day, so the first event fixes the starting position.
                zone = e.zone
            if e.kind == "spawn":
                zone = e.zone
            elif e.kind == "depart":
                if zone is not None and e.zone != zone:
                    v.append(f"vehicle {vid}: departs {e.zone}, was at {zone}")
                leg_from = e.zone
                leg_occupied = bool(onboard)
                if e.occupied != leg_occupied:
                    v.append(f"vehicle {vid}: depart occupancy flag wrong at {e.minute}")
            elif e.kind == "arrive":
                if leg_from is None:
                    v.append(f"vehicle {vid}: arrive without depart at {e.minute}")
                    leg_from = e.zone
                if e.zone != leg_from:
                    expected = float(skims.dist[zid[leg_from], zid[e.zone]])
                    if abs(e.miles - expected) > 1e-9:
                        v.append(
                            f"vehicle {vid}: miles {e.miles} != skim {expected} "
                            f"for {leg_from}->{e.zone}"
                        )
                else:
                    nxt = evs[i + 1] if i + 1 < len(evs) else None
                    delivers_intra = (
                        nxt is not None
                        and nxt.kind == "dropoff"
                        and nxt.minute == e.minute
                        and nxt.trips
                        and trip_by_id[nxt.trips[0]].origin
                        == trip_by_id[nxt.trips[0]].dest
                    )
                    expected = intra[e.zone] if delivers_intra else 0.0
                    if abs(e.miles - expected) > 1e-9:
                        v.append(
                            f"vehicle {vid}: same-zone miles {e.miles} != {expected} "
                            f"at {e.zone}"
                        )
                if bool(e.occupied) != bool(leg_occupied):
                    v.append(f"vehicle {vid}: arrive occupancy flag wrong at {e.minute}")
                if e.occupied:
                    vo += e.miles
                else:
                    ve += e.miles
                zone = e.zone
                leg_from = None
            elif e.kind == "pickup":
                if e.zone != zone:
                    v.append(f"vehicle {vid}: pickup away from position at {e.minute}")
                for tid in e.trips:
                    onboard.append(tid)
                    pickup_minute[tid] = e.minute
                    trip_vehicle[tid] = vid
                    rider_spans[tid] = [e.minute, float("nan")]
                if len(onboard) > 2:
                    v.append(f"vehicle {vid}: {len(onboard)} riders onboard at {e.minute}")
            elif e.kind == "dropoff":
                for tid in e.trips:
                    if tid not in onboard:
                        v.append(f"vehicle {vid}: dropoff of absent rider {tid}")
                    else:
                        onboard.remove(tid)
                    dropoff_minute[tid] = e.minute
                    if tid in rider_spans:
                        rider_spans[tid][1] = e.minute
            elif e.kind in ("park", "relocate_start"):
                if e.zone != zone:
                    v.append(f"vehicle {vid}: {e.kind} away from position at {e.minute}")
        if onboard:
            v.append(f"vehicle {vid}: riders {onboard} never dropped off")
        per_vehicle[vid] = (ve, vo)
        vmt_empty += ve
        vmt_occupied += vo
        spans = sorted(rider_spans.items())
        for a in range(len(spans)):
            for b in range(a + 1, len(spans)):
                (ta, sa), (tb, sb) = spans[a], spans[b]
                overlap = min(sa[1], sb[1]) - max(sa[0], sb[0])
                if overlap > 0:
                    pooled.add(ta)
                    pooled.add(tb)

    return LogReplay(
        vmt_empty=vmt_empty,
        vmt_occupied=vmt_occupied,
        per_vehicle_miles=per_vehicle,
        pickup_minute=pickup_minute,
        dropoff_minute=dropoff_minute,
        trip_vehicle=trip_vehicle,
        pooled_trip_ids=pooled,
        violations=v,
    )


def audit_detours(
    replay: LogReplay, trips: list[TripRequest], detour_cap: float
) -> list[str]:
    """Detour-cap violations among pooled riders, from replayed times only."""
    out = []
    for t in trips:
        if t.id not in replay.pooled_trip_ids:
            continue
        if t.id not in replay.pickup_minute or t.id not in replay.dropoff_minute:
            out.append(f"trip {t.id}: pooled but missing pickup/dropoff in log")
            continue
        in_vehicle = replay.dropoff_minute[t.id] - replay.pickup_minute[t.id]
        budget = (1.0 + detour_cap) * t.direct_time
        if in_vehicle > budget + 1e-9:
            out.append(
                f"trip {t.id}: in-vehicle {in_vehicle} exceeds budget {budget}"
            )
    return out


def audit_waits(trips: list[TripRequest], config: SimConfig) -> list[str]:
    """Wait-time guarantees for riders unwilling to share."""
    out = []
    limit = config.max_wait_nonsharer + config.tick_minutes
    for t in trips:
        if t.willing_to_share:
            continue
        if t.state == "served" and t.wait_minutes >= limit:
            out.append(f"trip {t.id}: served after waiting {t.wait_minutes}")
        if t.state == "abandoned" and abs(t.wait_minutes - config.max_wait_nonsharer) > 1e-9:
            out.append(f"trip {t.id}: abandoned at {t.wait_minutes}, not the limit")
    return out
