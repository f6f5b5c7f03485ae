"""Zone-to-zone travel-time and distance skims over the street network."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .scenario import MINUTES_PER_DAY, Network, PeriodSchedule, ScenarioError


@dataclass(frozen=True)
class SkimSet:
    zone_ids: tuple[str, ...]
    period_ids: tuple[str, ...]
    time: np.ndarray  # (periods, zones, zones) minutes
    dist: np.ndarray  # (zones, zones) miles, reference-period shortest-time path
    minute_period: np.ndarray  # (1440,) minute of day -> period index
    reference_period: str

    def period_index(self, minute: float) -> int:
        return int(self.minute_period[int(minute) % MINUTES_PER_DAY])

    def lookup(self, origin: str, dest: str, minute: float) -> tuple[float, float]:
        """(travel time minutes, distance miles) for a departure minute."""
        zi = self.zone_ids.index(origin)
        zj = self.zone_ids.index(dest)
        p = self.period_index(minute)
        return float(self.time[p, zi, zj]), float(self.dist[zi, zj])


def reference_period_id(schedule: PeriodSchedule) -> str:
    """Distance skim period: first non-peak period if any, else first period."""
    for pid in schedule.ids:
        if pid not in (schedule.am_peak, schedule.pm_peak):
            return pid
    return schedule.ids[0]


def build_skims(network: Network, schedule: PeriodSchedule) -> SkimSet:
    """All-pairs shortest travel times per period plus one distance matrix.

    Distances follow the reference period's time-shortest paths; among
    equal-time paths the lexicographically smallest node-id sequence wins,
    which keeps results reproducible across runs.
    """
    zone_ids = tuple(sorted(network.zone_connector))
    if not zone_ids:
        raise ScenarioError("no zones to skim")
    node_ids = sorted(network.nodes)
    node_idx = {nid: i for i, nid in enumerate(node_ids)}
    n_nodes = len(node_ids)
    connectors = [node_idx[network.zone_connector[z]] for z in zone_ids]

    period_ids = schedule.ids
    adj_f: list[list[list[tuple[int, float, float]]]] = [
        [[] for _ in range(n_nodes)] for _ in period_ids
    ]
    adj_r: list[list[list[tuple[int, float, float]]]] = [
        [[] for _ in range(n_nodes)] for _ in period_ids
    ]
    for ln in network.links:
        u, v = node_idx[ln.from_node], node_idx[ln.to_node]
        for pi, pid in enumerate(period_ids):
            tt = ln.travel_time_by_period[pid]
            adj_f[pi][u].append((v, tt, ln.length))
            adj_r[pi][v].append((u, tt, ln.length))

    nz = len(zone_ids)
    time = np.full((len(period_ids), nz, nz), np.inf)
    for pi in range(len(period_ids)):
        for zi, src in enumerate(connectors):
            dist_v = _dijkstra(adj_f[pi], src)
            for zj, dst in enumerate(connectors):
                time[pi, zi, zj] = dist_v[dst]
        np.fill_diagonal(time[pi], 0.0)
    if not np.isfinite(time).all():
        raise ScenarioError("network is not strongly connected over zone connectors")

    ref = reference_period_id(schedule)
    ref_i = schedule.index_of(ref)
    dist = np.zeros((nz, nz))
    # To extract path lengths deterministically: for each destination, run a
    # reverse Dijkstra, then walk forward from every origin always taking the
    # smallest-id node that stays on a shortest path.
    for zj, dst in enumerate(connectors):
        to_dst = _dijkstra(adj_r[ref_i], dst)
        for zi, src in enumerate(connectors):
            if src == dst:
                continue
            dist[zi, zj] = _walk_length(adj_f[ref_i], node_ids, to_dst, src, dst)
    return SkimSet(
        zone_ids=zone_ids,
        period_ids=tuple(period_ids),
        time=time,
        dist=dist,
        minute_period=schedule.minute_to_index(),
        reference_period=ref,
    )


def _dijkstra(adj: list[list[tuple[int, float, float]]], src: int) -> np.ndarray:
    n = len(adj)
    dist = np.full(n, np.inf)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, tt, _length in adj[u]:
            nd = d + tt
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def _walk_length(
    adj: list[list[tuple[int, float, float]]],
    node_ids: list[str],
    to_dst: np.ndarray,
    src: int,
    dst: int,
) -> float:
    # Relative slack tolerance: link times are floats, alternate shortest
    # paths must compare equal despite summation order.
    total = 0.0
    u = src
    guard = len(node_ids) * 4 + 8
    while u != dst:
        best: tuple[str, int, float] | None = None
        here = to_dst[u]
        for v, tt, length in adj[u]:
            if tt + to_dst[v] <= here * (1.0 + 1e-12) + 1e-9:
                if best is None or node_ids[v] < best[0]:
                    best = (node_ids[v], v, length)
        if best is None:
            raise ScenarioError("shortest-path walk lost its way")
        total += best[2]
        u = best[1]
        guard -= 1
        if guard == 0:
            raise ScenarioError("shortest-path walk did not terminate")
    return total
