"""Two-day fleet simulation.

Day 1 (warm-up) starts with zero vehicles and spawns one at the origin of any
rider still unassigned at the maximum wait, sizing the fleet. Day 2 keeps that
fleet, redraws demand from a fresh sub-seed, and is the metered day: requests
are matched to the nearest available vehicle, sharers are pooled under a
detour cap, non-sharers abandon at exactly the maximum wait, idle vehicles are
relocated toward expected demand every few minutes, and everything lands in an
event log that can be replayed independently of the simulator.

Movement is leg-quantized over zone-to-zone skims: a vehicle commits to a leg
and arrives at its exact (float-minute) eta; every leg is priced at the period
in effect at the leg's own start minute. Matching projects candidate plans
with the same float arithmetic the executor later performs, so replayed
in-vehicle times equal the planned ones bit for bit.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demand import (
    DepartureHistogram,
    TripRequest,
    intrazonal_distance,
    synthesize_trips,
    write_trips,
)
from .router import SkimSet
from .scenario import MINUTES_PER_DAY, Scenario, SimConfig
from .seeding import derive_seed

# Slack for detour-cap comparisons: boundary cases (exactly at the cap) count
# as feasible and float summation noise must not flip them.
_EPS = 1e-9

IDLE = "idle_parked"
RELOCATING = "relocating"
PICKUP = "enroute_pickup"
OCCUPIED = "occupied"


@dataclass(slots=True)
class Stop:
    zone: int
    action: str  # "pickup" | "dropoff"
    trip_id: int


@dataclass(slots=True)
class Leg:
    origin: int
    dest: int
    depart: float
    eta: float
    miles: float
    occupied: bool
    delivery_trip: int | None = None  # intra-zonal dropoff served by this leg


@dataclass(slots=True)
class Vehicle:
    id: int
    zone: int
    state: str = IDLE
    plan: list[Stop] = field(default_factory=list)
    leg: Leg | None = None
    leg_serial: int = 0
    onboard: list[int] = field(default_factory=list)
    park_minute: float = 0.0
    odom_empty: float = 0.0
    odom_occupied: float = 0.0


@dataclass(slots=True)
class Event:
    minute: float
    vehicle: int
    kind: str  # spawn|depart|arrive|pickup|dropoff|park|relocate_start
    zone: str
    miles: float
    occupied: bool
    trips: tuple[int, ...]


@dataclass
class PooledPlan:
    stops: tuple[tuple[str, str, int], ...]  # (zone id, action, trip id)
    stop_times: tuple[float, ...]
    vehicle_time: float  # minutes of vehicle commitment from plan start
    rider_in_vehicle: dict[int, float]


@dataclass
class SimulationResult:
    fleet_size: int
    seed: int
    config: SimConfig
    trips: list[TripRequest]  # metered-day trips with outcomes
    events: list[Event]  # metered-day log, drain included
    vehicles: list[dict]  # per-vehicle odometers and final zone
    counts: dict[str, int]


# ---------------------------------------------------------------------------
# Stop-order enumeration

# Two waiting riders: every order of O1 O2 D1 D2 with each pickup before its
# own dropoff. Orders where the riders never share a moving vehicle are
# chained solo rides, not pooling, and are filtered out below.
_PAIR_ORDERS: tuple[tuple[str, ...], ...] = (
    ("O1", "O2", "D1", "D2"),
    ("O1", "O2", "D2", "D1"),
    ("O1", "D1", "O2", "D2"),
    ("O2", "O1", "D1", "D2"),
    ("O2", "O1", "D2", "D1"),
    ("O2", "D2", "O1", "D1"),
)
# Rider 1 already onboard: the vehicle position stands in for O1.
_ONBOARD_ORDERS: tuple[tuple[str, ...], ...] = (
    ("O1", "O2", "D1", "D2"),
    ("O1", "O2", "D2", "D1"),
    ("O1", "D1", "O2", "D2"),
)


def _co_rides(order: tuple[str, ...]) -> bool:
    """True when both riders are onboard during some segment of the order."""
    onboard = {"1": False, "2": False}
    for stop in order[:-1]:
        onboard[stop[1]] = stop[0] == "O"
        if onboard["1"] and onboard["2"]:
            return True
    return False


_PAIR_CO: tuple[tuple[int, tuple[str, ...]], ...] = tuple(
    (i, o) for i, o in enumerate(_PAIR_ORDERS) if _co_rides(o)
)
_ONBOARD_CO: tuple[tuple[int, tuple[str, ...]], ...] = tuple(
    (i, o) for i, o in enumerate(_ONBOARD_ORDERS) if _co_rides(o)
)


def pooling_feasible(
    t1: TripRequest,
    t2: TripRequest,
    skims: SkimSet,
    minute: float,
    detour_cap: float = 0.20,
    *,
    onboard_start: tuple[str, float, float] | None = None,
) -> PooledPlan | None:
    """Best co-riding pooled plan for two sharers, or None.

    Both waiting: the plan starts with the first pickup at `minute` (any
    deadhead is the dispatcher's concern; it never enters rider in-vehicle
    times). With `onboard_start=(vehicle zone, active leg depart minute,
    rider-1 pickup minute)`, rider 1 is already onboard: the plan re-routes
    from the active leg's origin, keeping that leg's departure pricing, and
    cannot reach its first new stop before `minute`.

    Candidate stop orders keep each pickup ahead of its own dropoff; orders
    where the riders never ride together are rejected as non-pooling. Each
    rider's in-vehicle time may exceed the direct time by at most the detour
    cap (inclusive). Legs are priced at the period of their own start minute.
    Minimum total vehicle time wins; ties keep the earliest enumeration order.
    """
    if not (t1.willing_to_share and t2.willing_to_share):
        return None
    zid = {z: i for i, z in enumerate(skims.zone_ids)}
    places = {
        "O1": zid[t1.origin],
        "D1": zid[t1.dest],
        "O2": zid[t2.origin],
        "D2": zid[t2.dest],
    }
    mp = skims.minute_period
    time = skims.time

    def tt(o: int, d: int, t: float) -> float:
        return float(time[mp[int(t) % MINUTES_PER_DAY], o, d])

    budget = {
        "1": (1.0 + detour_cap) * t1.direct_time,
        "2": (1.0 + detour_cap) * t2.direct_time,
    }
    best: PooledPlan | None = None
    for _, order in (_PAIR_CO if onboard_start is None else _ONBOARD_CO):
        if onboard_start is None:
            zone = places[order[0]]
            t = minute
            pick = {order[0][1]: t}
            times = [t]
            emitted = order
            clamp_first = False
            start_t = minute
        else:
            zone = zid[onboard_start[0]]
            t = onboard_start[1]
            pick = {"1": onboard_start[2]}
            times = []
            emitted = order[1:]
            clamp_first = True
            start_t = onboard_start[1]
        drop: dict[str, float] = {}
        feasible = True
        for label in order[1:]:
            nxt = places[label]
            t = t + tt(zone, nxt, t)
            if clamp_first:
                t = max(t, minute)
                clamp_first = False
            zone = nxt
            times.append(t)
            rider = label[1]
            if label[0] == "O":
                pick[rider] = t
            else:
                drop[rider] = t
                if t - pick[rider] > budget[rider] + _EPS:
                    feasible = False
                    break
        if not feasible:
            continue
        vehicle_time = times[-1] - start_t
        if best is None or vehicle_time < best.vehicle_time - _EPS:
            best = PooledPlan(
                stops=tuple(
                    (
                        skims.zone_ids[places[label]],
                        "pickup" if label[0] == "O" else "dropoff",
                        t1.id if label[1] == "1" else t2.id,
                    )
                    for label in emitted
                ),
                stop_times=tuple(times),
                vehicle_time=vehicle_time,
                rider_in_vehicle={
                    t1.id: drop["1"] - pick["1"],
                    t2.id: drop["2"] - pick["2"],
                },
            )
    return best


# ---------------------------------------------------------------------------
# Simulation core

class _Day:
    """One simulated day over a fixed (warm-up: growing) fleet."""

    def __init__(
        self,
        scenario: Scenario,
        skims: SkimSet,
        config: SimConfig,
        vehicles: list[Vehicle],
        trips: list[TripRequest],
        *,
        warmup: bool,
        record: bool,
    ) -> None:
        self.sc = scenario
        self.sk = skims
        self.cfg = config
        self.vehicles = vehicles
        self.trips = trips
        self.warmup = warmup
        self.record = record

        self.zone_ids = skims.zone_ids
        self.n_zones = len(self.zone_ids)
        self.time = skims.time
        self.dist = skims.dist
        self.mp_idx = skims.minute_period
        self.cap = config.detour_cap
        self.max_wait = config.max_wait_nonsharer
        self.intra = np.array(
            [intrazonal_distance(scenario, config, z) for z in self.zone_ids]
        )

        # Expected demand per zone and period (OD row sums), for relocation.
        self.od_rows = np.stack(
            [scenario.od_dense(p).sum(axis=1) for p in skims.period_ids]
        )
        self.period_minutes = np.array(
            [end - start for _, start, end in scenario.schedule.periods], dtype=float
        )

        zidx = {z: i for i, z in enumerate(self.zone_ids)}
        self.o_idx = {t.id: zidx[t.origin] for t in trips}
        self.d_idx = {t.id: zidx[t.dest] for t in trips}

        self.events: list[Event] = []
        self.arrivals: list[tuple[float, int, int]] = []  # (eta, vehicle, serial)
        self.waiting: dict[int, TripRequest] = {}
        self.by_minute: dict[int, list[TripRequest]] = {}
        for t in trips:
            self.by_minute.setdefault(int(t.request_minute), []).append(t)
        self.idle_ids: set[int] = {v.id for v in vehicles if v.state == IDLE}
        self.reloc_ids: set[int] = set()
        self.share_ids: set[int] = set()
        self.park_pending: list[tuple[int, float]] = []
        self.epoch = 0
        self.trip_epoch: dict[int, int] = {}
        self.spawned = 0
        self._tick: dict | None = None  # per-tick dispatch snapshots

    # -- helpers -----------------------------------------------------------

    def _per(self, minute: float) -> int:
        return int(self.mp_idx[int(minute) % MINUTES_PER_DAY])

    def _per_vec(self, minutes: np.ndarray) -> np.ndarray:
        return self.mp_idx[minutes.astype(np.int64) % MINUTES_PER_DAY]

    def _tt(self, o: int, d: int, minute: float) -> float:
        return float(self.time[self._per(minute), o, d])

    def _emit(self, minute, veh, kind, zone_idx, miles=0.0, occupied=False, trips=()):
        self.epoch += 1
        if self.record:
            self.events.append(
                Event(
                    minute=float(minute),
                    vehicle=veh,
                    kind=kind,
                    zone=self.zone_ids[zone_idx],
                    miles=float(miles),
                    occupied=occupied,
                    trips=tuple(trips),
                )
            )

    def _push_leg(self, veh: Vehicle, leg: Leg) -> None:
        veh.leg = leg
        veh.leg_serial += 1
        heapq.heappush(self.arrivals, (leg.eta, veh.id, veh.leg_serial))

    def _start_leg(self, veh: Vehicle, dest: int, now: float, delivery: int | None = None):
        occupied = bool(veh.onboard)
        if dest == veh.zone:
            miles = float(self.intra[dest]) if delivery is not None else 0.0
            leg = Leg(veh.zone, dest, now, now, miles, occupied, delivery)
        else:
            tt = self._tt(veh.zone, dest, now)
            leg = Leg(veh.zone, dest, now, now + tt, float(self.dist[veh.zone, dest]), occupied)
        self._emit(now, veh.id, "depart", veh.zone, occupied=occupied, trips=tuple(veh.onboard))
        # A moving segment with two riders onboard makes those rides pooled.
        if len(veh.onboard) >= 2 and leg.eta > leg.depart:
            for tid in veh.onboard:
                self.trips[tid].pooled = True
        self._push_leg(veh, leg)

    def _proceed(self, veh: Vehicle, now: float, delivered: int | None = None) -> None:
        """Execute plan stops at the current zone, then start a leg or park."""
        while veh.plan and veh.plan[0].zone == veh.zone:
            stop = veh.plan[0]
            trip = self.trips[stop.trip_id]
            if (
                stop.action == "dropoff"
                and self.o_idx[trip.id] == self.d_idx[trip.id]
                and stop.trip_id != delivered
            ):
                break  # intra-zonal delivery needs its own zero-time leg
            veh.plan.pop(0)
            if stop.action == "pickup":
                assert len(veh.onboard) < 2, "vehicle capacity exceeded"
                veh.onboard.append(trip.id)
                trip.state = "onboard"
                trip.pickup_minute = now
                trip.wait_minutes = now - trip.request_minute
                veh.state = OCCUPIED
                self._emit(now, veh.id, "pickup", veh.zone, trips=(trip.id,))
            else:
                veh.onboard.remove(trip.id)
                trip.state = "served"
                trip.dropoff_minute = now
                self._emit(now, veh.id, "dropoff", veh.zone, trips=(trip.id,))
                delivered = None
        self._update_share_candidacy(veh)
        if veh.plan:
            nxt = veh.plan[0]
            if nxt.zone == veh.zone:
                # Only reachable for an intra-zonal dropoff: a zero-time leg
                # carrying that trip's floor mileage.
                self._start_leg(veh, nxt.zone, now, delivery=nxt.trip_id)
            else:
                self._start_leg(veh, nxt.zone, now)
            if not veh.onboard:
                veh.state = PICKUP
        else:
            # Park now unless dispatch reclaims the vehicle this tick; the
            # park event is finalized (or dropped) at the end of the tick.
            veh.state = IDLE
            veh.leg = None
            veh.park_minute = now
            self.idle_ids.add(veh.id)
            self.park_pending.append((veh.id, now))

    def _on_arrival(self, veh: Vehicle, leg: Leg) -> None:
        veh.zone = leg.dest
        if leg.occupied:
            veh.odom_occupied += leg.miles
        else:
            veh.odom_empty += leg.miles
        self._emit(
            leg.eta, veh.id, "arrive", leg.dest,
            miles=leg.miles, occupied=leg.occupied, trips=tuple(veh.onboard),
        )
        if veh.state == RELOCATING:
            self.reloc_ids.discard(veh.id)
        self._proceed(veh, leg.eta, delivered=leg.delivery_trip)

    def _update_share_candidacy(self, veh: Vehicle) -> None:
        eligible = (
            veh.state == OCCUPIED
            and len(veh.onboard) == 1
            and len(veh.plan) == 1
            and veh.plan[0].action == "dropoff"
            and self.trips[veh.onboard[0]].willing_to_share
        )
        if eligible:
            self.share_ids.add(veh.id)
        else:
            self.share_ids.discard(veh.id)

    # -- per-tick dispatch snapshots -----------------------------------------

    def _build_tick(self, m: int) -> dict:
        """Availability / pooling snapshots shared by every match this tick."""
        snap: dict = {"m": float(m)}
        ids = sorted(self.idle_ids | self.reloc_ids)
        if ids:
            zone = np.empty(len(ids), dtype=np.int64)
            start = np.empty(len(ids), dtype=float)
            for i, vid in enumerate(ids):
                v = self.vehicles[vid]
                if v.state == RELOCATING:
                    zone[i] = v.leg.dest
                    start[i] = v.leg.eta
                else:
                    zone[i] = v.zone
                    start[i] = m
            snap["avail"] = {
                "ids": np.array(ids, dtype=np.int64),
                "zone": zone,
                "start": start,
                "per": self._per_vec(start),
                "alive": np.ones(len(ids), dtype=bool),
                "pos": {vid: i for i, vid in enumerate(ids)},
            }
        else:
            snap["avail"] = None

        sids = sorted(self.share_ids)
        if sids:
            k = len(sids)
            share = {
                "ids": np.array(sids, dtype=np.int64),
                "A": np.empty(k, dtype=np.int64),
                "depart": np.empty(k, dtype=float),
                "old_end": np.empty(k, dtype=float),
                "pk1": np.empty(k, dtype=float),
                "dir1": np.empty(k, dtype=float),
                "D1": np.empty(k, dtype=np.int64),
                "rider": np.empty(k, dtype=np.int64),
                "alive": np.ones(k, dtype=bool),
            }
            for i, vid in enumerate(sids):
                v = self.vehicles[vid]
                rider = self.trips[v.onboard[0]]
                assert v.leg is not None and v.leg.dest == self.d_idx[rider.id]
                share["A"][i] = v.leg.origin
                share["depart"][i] = v.leg.depart
                share["old_end"][i] = v.leg.eta
                share["pk1"][i] = rider.pickup_minute
                share["dir1"][i] = rider.direct_time
                share["D1"][i] = self.d_idx[rider.id]
                share["rider"][i] = rider.id
            snap["share"] = share
        else:
            snap["share"] = None

        pids = sorted(tid for tid, t in self.waiting.items() if t.willing_to_share)
        if pids:
            part = {
                "pid": np.array(pids, dtype=np.int64),
                "O1": np.array([self.o_idx[i] for i in pids], dtype=np.int64),
                "D1": np.array([self.d_idx[i] for i in pids], dtype=np.int64),
                "b1": np.array(
                    [(1.0 + self.cap) * self.trips[i].direct_time + _EPS for i in pids]
                ),
                "alive": np.ones(len(pids), dtype=bool),
                "pos": {tid: i for i, tid in enumerate(pids)},
            }
            avail = snap["avail"]
            if avail is not None:
                # Absolute arrival minute of each available vehicle at each
                # waiting sharer's origin (rows: vehicles in id order).
                part["t0"] = (
                    avail["start"][:, None]
                    + self.time[
                        avail["per"][:, None], avail["zone"][:, None], part["O1"][None, :]
                    ]
                )
            snap["partners"] = part
        else:
            snap["partners"] = None
        return snap

    def _kill_avail(self, vid: int) -> None:
        snap = self._tick
        if snap is None or snap["avail"] is None:
            return
        pos = snap["avail"]["pos"].get(vid)
        if pos is None:
            return
        snap["avail"]["alive"][pos] = False
        part = snap["partners"]
        if part is not None and "t0" in part:
            part["t0"][pos, :] = np.inf

    def _kill_partner(self, tid: int) -> None:
        snap = self._tick
        if snap is None or snap["partners"] is None:
            return
        pos = snap["partners"]["pos"].get(tid)
        if pos is not None:
            snap["partners"]["alive"][pos] = False

    # -- matching ------------------------------------------------------------

    def _nearest_avail(self, target: int, m: float):
        """(vehicle id, absolute arrival minute) of the nearest available one."""
        avail = self._tick["avail"]
        if avail is None or not avail["alive"].any():
            return None
        t_abs = avail["start"] + self.time[avail["per"], avail["zone"], target]
        t_abs = np.where(avail["alive"], t_abs, np.inf)
        # Rows are in ascending vehicle-id order, so argmin resolves exact
        # ties to the lowest vehicle id.
        i = int(np.argmin(t_abs))
        if not np.isfinite(t_abs[i]):
            return None
        return int(avail["ids"][i]), float(t_abs[i])

    def _best_onboard_pool(self, trip: TripRequest, m: float):
        """Divert a single-sharer vehicle: both remaining stop orders, vectorized."""
        share = self._tick["share"]
        if share is None or not share["alive"].any():
            return None
        O2 = self.o_idx[trip.id]
        D2 = self.d_idx[trip.id]
        A, d = share["A"], share["depart"]
        pk1, dir1, D1 = share["pk1"], share["dir1"], share["D1"]
        b1 = (1.0 + self.cap) * dir1 + _EPS
        b2 = (1.0 + self.cap) * trip.direct_time + _EPS

        e1 = np.maximum(m, d + self.time[self._per_vec(d), A, O2])
        # order a: pick up rider 2, drop rider 1, drop rider 2
        eD1a = e1 + self.time[self._per_vec(e1), O2, D1]
        eD2a = eD1a + self.time[self._per_vec(eD1a), D1, D2]
        feas_a = (eD1a - pk1 <= b1) & (eD2a - e1 <= b2) & share["alive"]
        # order b: pick up rider 2, drop rider 2, drop rider 1
        eD2b = e1 + self.time[self._per_vec(e1), O2, D2]
        eD1b = eD2b + self.time[self._per_vec(eD2b), D2, D1]
        feas_b = (eD2b - e1 <= b2) & (eD1b - pk1 <= b1) & share["alive"]
        if not (feas_a.any() or feas_b.any()):
            return None
        add_a = np.where(feas_a, eD2a - share["old_end"], np.inf)
        add_b = np.where(feas_b, eD1b - share["old_end"], np.inf)
        order_sel = np.where(add_a <= add_b, 0, 1)
        add = np.minimum(add_a, add_b)
        i = int(np.argmin(add))  # ids ascending: ties take the lowest id
        if not np.isfinite(add[i]):
            return None
        return {
            "added": float(add[i]),
            "vehicle": int(share["ids"][i]),
            "order": int(order_sel[i]),
            "index": i,
        }

    def _commit_onboard_pool(self, trip: TripRequest, choice, m: float) -> None:
        share = self._tick["share"]
        veh = self.vehicles[choice["vehicle"]]
        rider1 = self.trips[int(share["rider"][choice["index"]])]
        O2, D2 = self.o_idx[trip.id], self.d_idx[trip.id]
        D1 = self.d_idx[rider1.id]
        if choice["order"] == 0:
            tail = [Stop(D1, "dropoff", rider1.id), Stop(D2, "dropoff", trip.id)]
        else:
            tail = [Stop(D2, "dropoff", trip.id), Stop(D1, "dropoff", rider1.id)]
        veh.plan = [Stop(O2, "pickup", trip.id)] + tail
        leg = veh.leg
        # Re-plan from the active leg's origin, keeping its departure pricing;
        # the new first leg cannot arrive before the present minute. The
        # superseded leg never arrives, so its mileage is never counted.
        eta = max(m, leg.depart + self._tt(leg.origin, O2, leg.depart))
        self._push_leg(
            veh,
            Leg(leg.origin, O2, leg.depart, eta, float(self.dist[leg.origin, O2]), True),
        )
        trip.vehicle_id = veh.id
        del self.waiting[trip.id]
        self.share_ids.discard(veh.id)
        share["alive"][choice["index"]] = False
        self._kill_partner(trip.id)
        self.epoch += 1

    def _best_pair_pool(self, trip: TripRequest, m: float):
        """Pair the trip with another waiting sharer, all co-riding orders.

        Vectorized over partners; the dispatched vehicle is the nearest
        available one to the order's first pickup. Tie order: added vehicle
        minutes, vehicle id, partner trip id, enumeration order.
        """
        snap = self._tick
        part = snap["partners"]
        avail = snap["avail"]
        if part is None or avail is None or not avail["alive"].any():
            return None
        pmask = part["alive"] & (part["pid"] != trip.id)
        if not pmask.any():
            return None
        O1, D1, b1 = part["O1"], part["D1"], part["b1"]
        O2 = self.o_idx[trip.id]
        D2 = self.d_idx[trip.id]
        b2 = (1.0 + self.cap) * trip.direct_time + _EPS
        n = len(part["pid"])
        hit_o2 = self._nearest_avail(O2, m)

        # Nearest vehicle per partner origin (rows already id-ordered).
        rows = np.argmin(part["t0"], axis=0)
        cols = np.arange(n)
        t0_o1 = part["t0"][rows, cols]
        veh_o1 = avail["ids"][rows]

        cands = []
        zones = {"O1": O1, "D1": D1, "O2": O2, "D2": D2}
        for oi, order in _PAIR_CO:
            if order[0] == "O1":
                t = t0_o1
                veh = veh_o1
                ok = np.isfinite(t) & pmask
            else:
                if hit_o2 is None:
                    continue
                t = np.full(n, hit_o2[1])
                veh = np.full(n, hit_o2[0], dtype=np.int64)
                ok = pmask.copy()
            pick = {order[0][1]: t}
            prev = zones[order[0]]
            for label in order[1:]:
                nxt = zones[label]
                t = t + self.time[self._per_vec(t), prev, nxt]
                prev = nxt
                if label[0] == "O":
                    pick[label[1]] = t
                else:
                    budget = b1 if label[1] == "1" else b2
                    ok = ok & (t - pick[label[1]] <= budget)
            added = np.where(ok & np.isfinite(t), t - m, np.inf)
            cands.append((added, np.broadcast_to(veh, added.shape), oi))
        if not cands:
            return None
        added = np.concatenate([c[0] for c in cands])
        veh = np.concatenate([c[1] for c in cands])
        pid = np.concatenate([part["pid"] for _ in cands])
        oi = np.concatenate([np.full(n, c[2]) for c in cands])
        if not np.isfinite(added).any():
            return None
        j = int(np.lexsort((oi, pid, veh, added))[0])
        return {
            "added": float(added[j]),
            "vehicle": int(veh[j]),
            "partner": int(pid[j]),
            "order": _PAIR_ORDERS[int(oi[j])],
        }

    def _commit_pair_pool(self, trip: TripRequest, choice, m: float) -> None:
        other = self.trips[choice["partner"]]
        zone_of = {
            "O1": self.o_idx[other.id],
            "D1": self.d_idx[other.id],
            "O2": self.o_idx[trip.id],
            "D2": self.d_idx[trip.id],
        }
        trip_of = {"1": other.id, "2": trip.id}
        stops = [
            Stop(zone_of[label], "pickup" if label[0] == "O" else "dropoff", trip_of[label[1]])
            for label in choice["order"]
        ]
        self._assign_vehicle(choice["vehicle"], stops, m)
        trip.vehicle_id = choice["vehicle"]
        other.vehicle_id = choice["vehicle"]
        del self.waiting[trip.id]
        del self.waiting[other.id]
        self._kill_partner(trip.id)
        self._kill_partner(other.id)

    def _assign_vehicle(self, vid: int, stops: list[Stop], m: float) -> None:
        veh = self.vehicles[vid]
        self._kill_avail(vid)
        veh.plan = stops
        if veh.state == RELOCATING:
            # The relocation leg continues; the plan takes over on arrival.
            self.reloc_ids.discard(vid)
            veh.state = PICKUP
        else:
            self.idle_ids.discard(vid)
            veh.state = PICKUP
            self._proceed(veh, float(m))
        self.epoch += 1

    def _dispatch(self, m: int) -> None:
        if not self.waiting:
            return
        queue = sorted(self.waiting.values(), key=lambda t: (t.request_minute, t.id))
        self._tick = self._build_tick(m)
        for trip in queue:
            if trip.id not in self.waiting:
                continue  # already pooled as a partner this tick
            if self.trip_epoch.get(trip.id) == self.epoch:
                continue  # nothing has changed since the last failed attempt
            if trip.willing_to_share:
                pool = self._best_onboard_pool(trip, m)
                pair = self._best_pair_pool(trip, m)
                if pool is not None and pair is not None:
                    if (pair["added"], pair["vehicle"]) < (pool["added"], pool["vehicle"]):
                        pool = None
                    else:
                        pair = None
                if pool is not None:
                    self._commit_onboard_pool(trip, pool, m)
                    continue
                if pair is not None:
                    self._commit_pair_pool(trip, pair, m)
                    continue
            hit = self._nearest_avail(self.o_idx[trip.id], m)
            if hit is not None:
                self._assign_vehicle(
                    hit[0],
                    [
                        Stop(self.o_idx[trip.id], "pickup", trip.id),
                        Stop(self.d_idx[trip.id], "dropoff", trip.id),
                    ],
                    m,
                )
                trip.vehicle_id = hit[0]
                del self.waiting[trip.id]
                self._kill_partner(trip.id)
            else:
                self.trip_epoch[trip.id] = self.epoch
        self._tick = None

    # -- per-tick phases -------------------------------------------------------

    def _process_arrivals(self, until: float) -> None:
        while self.arrivals and self.arrivals[0][0] <= until:
            eta, vid, serial = heapq.heappop(self.arrivals)
            veh = self.vehicles[vid]
            if serial != veh.leg_serial or veh.leg is None:
                continue  # superseded by a diversion
            leg = veh.leg
            veh.leg = None
            self._on_arrival(veh, leg)

    def _spawn_phase(self, m: int) -> None:
        due = [
            t
            for t in self.by_minute.get(m - int(self.max_wait), [])
            if t.id in self.waiting
        ]
        for trip in sorted(due, key=lambda t: t.id):
            vid = len(self.vehicles)
            veh = Vehicle(id=vid, zone=self.o_idx[trip.id], park_minute=float(m))
            self.vehicles.append(veh)
            self.spawned += 1
            self._emit(float(m), vid, "spawn", veh.zone)
            veh.plan = [
                Stop(self.o_idx[trip.id], "pickup", trip.id),
                Stop(self.d_idx[trip.id], "dropoff", trip.id),
            ]
            veh.state = PICKUP
            trip.vehicle_id = vid
            del self.waiting[trip.id]
            self._proceed(veh, float(m))

    def _abandon_phase(self, m: int) -> None:
        for trip in self.by_minute.get(m - int(self.max_wait), []):
            if trip.state != "waiting" or trip.willing_to_share:
                continue
            trip.state = "abandoned"
            trip.wait_minutes = float(m) - trip.request_minute
            self.waiting.pop(trip.id, None)
            if trip.vehicle_id is not None:
                self._cancel_assignment(trip)
            self.epoch += 1

    def _cancel_assignment(self, trip: TripRequest) -> None:
        veh = self.vehicles[trip.vehicle_id]
        veh.plan = [s for s in veh.plan if s.trip_id != trip.id]
        trip.vehicle_id = None
        # The active leg always completes; a now-empty plan parks the vehicle
        # at that leg's destination through the normal arrival path.
        self._update_share_candidacy(veh)

    def _finalize_parks(self) -> None:
        for vid, when in self.park_pending:
            veh = self.vehicles[vid]
            if veh.state == IDLE and not veh.plan and veh.leg is None:
                self._emit(when, vid, "park", veh.zone)
        self.park_pending.clear()

    def _relocation_phase(self, m: int) -> None:
        p = self._per(m)
        window = (
            self.cfg.market_penetration
            * self.od_rows[p]
            * (self.cfg.relocation_interval / self.period_minutes[p])
        )
        if window.sum() <= 0:
            return
        idle_by_zone: dict[int, list[Vehicle]] = {}
        for vid in self.idle_ids:
            veh = self.vehicles[vid]
            idle_by_zone.setdefault(veh.zone, []).append(veh)
        idle_counts = np.zeros(self.n_zones)
        for z, vs in idle_by_zone.items():
            idle_counts[z] = len(vs)
        defined = window > 0
        ratios = np.divide(idle_counts, window, out=np.zeros_like(window), where=defined)
        mean = float(ratios[defined].mean())
        # Receivers sit at or below the mean; donors strictly above it (or
        # holding idle vehicles without any expected demand). The inclusive
        # receiver rule matters when every demand zone shares one ratio: a
        # demand zone starved of vehicles must still attract them from a
        # no-demand zone, while all-equal supply stays put for lack of donors.
        receivers = np.array(
            [z for z in range(self.n_zones) if defined[z] and ratios[z] <= mean],
            dtype=np.int64,
        )
        if receivers.size == 0:
            return
        donors = [
            z
            for z in sorted(idle_by_zone)
            if idle_counts[z] > 0 and (not defined[z] or ratios[z] > mean)
        ]
        for z in donors:
            tt = self.time[p, z, receivers]
            target = int(receivers[np.lexsort((receivers, tt))[0]])
            veh = min(idle_by_zone[z], key=lambda v: (v.park_minute, v.id))
            self.idle_ids.discard(veh.id)
            veh.state = RELOCATING
            self.reloc_ids.add(veh.id)
            self._emit(float(m), veh.id, "relocate_start", veh.zone)
            self._start_leg(veh, target, float(m))

    # -- day loop ----------------------------------------------------------------

    def run(self) -> None:
        boundaries = set()
        prev = -1
        for minute in range(MINUTES_PER_DAY):
            cur = int(self.mp_idx[minute])
            if cur != prev:
                boundaries.add(minute)
                prev = cur
        for m in range(MINUTES_PER_DAY):
            if m in boundaries:
                self.epoch += 1  # congestion prices changed; retry matching
            self._process_arrivals(float(m))
            for trip in self.by_minute.get(m, ()):
                self.waiting[trip.id] = trip
                self.epoch += 1
            self._dispatch(m)
            if self.warmup:
                self._spawn_phase(m)
            else:
                self._abandon_phase(m)
            self._finalize_parks()
            if m % self.cfg.relocation_interval == 0:
                self._relocation_phase(m)
        # Midnight: cancel every pickup that has not happened, then drain the
        # in-flight plans so onboard riders are delivered and vehicles park.
        for trip in self.trips:
            if trip.state == "waiting":
                if trip.vehicle_id is not None:
                    self._cancel_assignment(trip)
                self.waiting.pop(trip.id, None)
        while self.arrivals:
            self._process_arrivals(self.arrivals[0][0])
        self._finalize_parks()
        for veh in self.vehicles:
            assert not veh.plan and veh.leg is None and not veh.onboard


def run_simulation(
    scenario: Scenario,
    skims: SkimSet,
    config: SimConfig,
    seed: int,
    hist: DepartureHistogram | None = None,
) -> SimulationResult:
    """Warm-up day, fleet reset, metered day. Deterministic in (inputs, seed)."""
    config.validate()
    day1_trips = synthesize_trips(scenario, config, skims, derive_seed(seed, "day1"), hist)
    vehicles: list[Vehicle] = []
    day1 = _Day(scenario, skims, config, vehicles, day1_trips, warmup=True, record=False)
    day1.run()
    fleet_size = len(vehicles)

    for veh in vehicles:
        veh.state = IDLE
        veh.plan = []
        veh.leg = None
        veh.leg_serial = 0
        veh.onboard = []
        veh.park_minute = 0.0
        veh.odom_empty = 0.0
        veh.odom_occupied = 0.0

    day2_trips = synthesize_trips(scenario, config, skims, derive_seed(seed, "day2"), hist)
    day2 = _Day(scenario, skims, config, vehicles, day2_trips, warmup=False, record=True)
    day2.run()
    assert len(vehicles) == fleet_size, "fleet must stay fixed on the metered day"

    counts = {
        "generated": len(day2_trips),
        "served": sum(1 for t in day2_trips if t.state == "served"),
        "abandoned": sum(1 for t in day2_trips if t.state == "abandoned"),
        "still_waiting": sum(1 for t in day2_trips if t.state == "waiting"),
        "pooled": sum(1 for t in day2_trips if t.pooled),
        "sharers_generated": sum(1 for t in day2_trips if t.willing_to_share),
        "fleet_spawned_warmup": day1.spawned,
    }
    assert (
        counts["served"] + counts["abandoned"] + counts["still_waiting"]
        == counts["generated"]
    )
    vehicle_rows = [
        {
            "id": v.id,
            "final_zone": day2.zone_ids[v.zone],
            "odom_empty": v.odom_empty,
            "odom_occupied": v.odom_occupied,
        }
        for v in vehicles
    ]
    return SimulationResult(
        fleet_size=fleet_size,
        seed=seed,
        config=config,
        trips=day2_trips,
        events=day2.events,
        vehicles=vehicle_rows,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# Serialization

def write_eventlog(events: list[Event], path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(
                json.dumps(
                    {
                        "minute": e.minute,
                        "vehicle": e.vehicle,
                        "event": e.kind,
                        "zone": e.zone,
                        "miles": e.miles,
                        "occupied": e.occupied,
                        "trips": list(e.trips),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_eventlog(path: str | Path) -> list[Event]:
    events = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            events.append(
                Event(
                    minute=d["minute"],
                    vehicle=d["vehicle"],
                    kind=d["event"],
                    zone=d["zone"],
                    miles=d["miles"],
                    occupied=d["occupied"],
                    trips=tuple(d["trips"]),
                )
            )
    return events


def write_simresult(result: SimulationResult, out_dir: str | Path) -> None:
    """eventlog.jsonl + trips_out.csv + simresult.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_eventlog(result.events, out / "eventlog.jsonl")
    write_trips(result.trips, out / "trips_out.csv")
    cfg = result.config
    summary = {
        "fleet_size": result.fleet_size,
        "seed": result.seed,
        "config": {
            "market_penetration": cfg.market_penetration,
            "willingness_to_share": cfg.willingness_to_share,
            "max_wait_nonsharer": cfg.max_wait_nonsharer,
            "detour_cap": cfg.detour_cap,
            "tick_minutes": cfg.tick_minutes,
            "relocation_interval": cfg.relocation_interval,
            "rng_seed": cfg.rng_seed,
            "intrazonal_dist_factor": cfg.intrazonal_dist_factor,
        },
        "counts": result.counts,
        "vehicles": result.vehicles,
    }
    (out / "simresult.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n"
    )
