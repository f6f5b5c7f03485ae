"""Shared construction helpers for the test suite."""

from __future__ import annotations

import math

from savsim.scenario import (
    BlockGroupAttrs,
    Link,
    Network,
    ODMatrix,
    PeriodSchedule,
    Scenario,
    Zone,
)

TWO_PERIODS = PeriodSchedule(
    periods=(("am", 0, 720), ("pm", 720, 1440)), am_peak="am", pm_peak="pm"
)


def make_block(
    block_id: str,
    x: float,
    y: float,
    *,
    zone_id: str = "",
    area: float = 0.25,
    population: float = 100.0,
    households: float = 40.0,
    housing_sf: float = 20.0,
    housing_mf: float = 20.0,
    workers: float = 50.0,
    job_reserve: float = 20.0,
    job_prof: float = 20.0,
    job_labor: float = 10.0,
    job_resource: float = 10.0,
    job_office: float = 0.0,
    job_industry: float = 0.0,
    job_entertain: float = 0.0,
) -> BlockGroupAttrs:
    """A block-group record with overridable attributes (defaults: balanced mix)."""
    return BlockGroupAttrs(
        id=block_id,
        zone_id=zone_id or block_id.split("B")[0],
        cx=x,
        cy=y,
        area=area,
        population=population,
        households=households,
        housing_sf=housing_sf,
        housing_mf=housing_mf,
        workers=workers,
        job_reserve=job_reserve,
        job_prof=job_prof,
        job_labor=job_labor,
        job_resource=job_resource,
        job_office=job_office,
        job_industry=job_industry,
        job_entertain=job_entertain,
    )


def make_scenario(
    zone_xy: dict[str, tuple[float, float]],
    links_spec: list[tuple[str, str, float, object]],
    od_means: dict[str, dict[tuple[str, str], float]],
    *,
    schedule: PeriodSchedule = TWO_PERIODS,
    areas: dict[str, float] | None = None,
    blocks: dict[str, tuple] | None = None,
    speed_limit: float = 30.0,
    pedestrian_allowed: bool = True,
    city_id: str = "hand",
    region: str = "R",
    geometry: dict | None = None,
) -> Scenario:
    """Build a scenario with one network node per zone.

    ``links_spec`` rows are ``(from_zone, to_zone, length_miles, travel_time)``
    where ``travel_time`` is either a single number applied to every period or
    a ``{period_id: minutes}`` dict. ``od_means`` maps period id to a sparse
    ``{(origin, dest): mean}`` table; omitted periods get no demand.
    """
    zones: dict[str, Zone] = {}
    nodes: dict[str, tuple[float, float]] = {}
    connector: dict[str, str] = {}
    geom_zones: dict[str, list] = {}
    for zid, (x, y) in zone_xy.items():
        area = (areas or {}).get(zid, 1.0)
        zones[zid] = Zone(zid, float(x), float(y), float(area), tuple((blocks or {}).get(zid, ())))
        nid = "N" + zid
        nodes[nid] = (float(x), float(y))
        connector[zid] = nid
        half = math.sqrt(area) / 2.0
        geom_zones[zid] = [
            [(x - half, y - half), (x + half, y - half), (x + half, y + half), (x - half, y + half)]
        ]
    links = []
    for a, b, length, tt in links_spec:
        if isinstance(tt, dict):
            tt_by_p = {pid: float(v) for pid, v in tt.items()}
        else:
            tt_by_p = {pid: float(tt) for pid, _, _ in schedule.periods}
        links.append(
            Link("N" + a, "N" + b, float(length), speed_limit, 1, pedestrian_allowed, tt_by_p)
        )
    od = {}
    for pid, _, _ in schedule.periods:
        entries = {
            (o, d): float(v) for (o, d), v in od_means.get(pid, {}).items()
        }
        od[pid] = ODMatrix(pid, entries)
    if geometry is None:
        xs = [x for x, _ in zone_xy.values()]
        ys = [y for _, y in zone_xy.values()]
        pad = 1.0
        ring = [
            (min(xs) - pad, min(ys) - pad),
            (max(xs) + pad, min(ys) - pad),
            (max(xs) + pad, max(ys) + pad),
            (min(xs) - pad, max(ys) + pad),
        ]
        geometry = {"city": [ring], "zones": geom_zones, "blocks": {}}
    return Scenario(
        city_id=city_id,
        region=region,
        zones=zones,
        network=Network(nodes=nodes, links=tuple(links), zone_connector=connector),
        od=od,
        schedule=schedule,
        geometry=geometry,
        flows=None,
    )


def square_ring(cx: float, cy: float, half: float) -> list[tuple[float, float]]:
    return [
        (cx - half, cy - half),
        (cx + half, cy - half),
        (cx + half, cy + half),
        (cx - half, cy + half),
    ]
