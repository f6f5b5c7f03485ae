"""City scenario model: zones, block groups, street network, OD demand, periods.

Scenario directories are plain CSV/JSON so fixtures stay inspectable and
diffable. A parameterized synthetic grid-city generator covers desk-scale
experiments end to end (zones, blocks, network, OD matrices, geometry,
commute flows).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

MINUTES_PER_DAY = 1440

JOB_SECTOR_FIELDS = (
    "job_reserve",
    "job_prof",
    "job_labor",
    "job_resource",
    "job_office",
    "job_industry",
    "job_entertain",
)

BLOCK_COLUMNS = (
    "id",
    "zone_id",
    "cx",
    "cy",
    "area",
    "pop",
    "hh",
    "h_sf",
    "h_mf",
    "workers",
) + JOB_SECTOR_FIELDS


class ScenarioError(Exception):
    """Scenario files missing, malformed, or internally inconsistent."""


@dataclass(frozen=True)
class BlockGroupAttrs:
    id: str
    zone_id: str
    cx: float
    cy: float
    area: float
    population: float
    households: float
    housing_sf: float
    housing_mf: float
    workers: float
    job_reserve: float
    job_prof: float
    job_labor: float
    job_resource: float
    job_office: float
    job_industry: float
    job_entertain: float

    @property
    def job_all(self) -> float:
        return (
            self.job_reserve
            + self.job_prof
            + self.job_labor
            + self.job_resource
            + self.job_office
            + self.job_industry
            + self.job_entertain
        )


@dataclass(frozen=True)
class Zone:
    id: str
    cx: float
    cy: float
    area: float
    blocks: tuple[BlockGroupAttrs, ...] = ()


@dataclass(frozen=True)
class Link:
    from_node: str
    to_node: str
    length: float  # miles
    speed_limit: float  # mph
    lanes_per_direction: int
    pedestrian_allowed: bool
    travel_time_by_period: dict[str, float]  # minutes


@dataclass(frozen=True)
class Network:
    nodes: dict[str, tuple[float, float]]
    links: tuple[Link, ...]
    zone_connector: dict[str, str]  # zone id -> nearest node id


@dataclass(frozen=True)
class ODMatrix:
    period: str
    entries: dict[tuple[str, str], float]  # mean person-trips over the period


@dataclass(frozen=True)
class PeriodSchedule:
    periods: tuple[tuple[str, int, int], ...]  # (id, start minute, end minute)
    am_peak: str
    pm_peak: str

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p[0] for p in self.periods)

    def duration(self, period_id: str) -> int:
        for pid, start, end in self.periods:
            if pid == period_id:
                return end - start
        raise KeyError(period_id)

    def minute_to_index(self) -> np.ndarray:
        """Length-1440 array mapping minute of day -> period index."""
        out = np.full(MINUTES_PER_DAY, -1, dtype=np.int64)
        for i, (_, start, end) in enumerate(self.periods):
            out[start:end] = i
        return out

    def index_of(self, period_id: str) -> int:
        return self.ids.index(period_id)


@dataclass(frozen=True)
class SimConfig:
    market_penetration: float = 1.0
    willingness_to_share: float = 0.275
    max_wait_nonsharer: float = 10.0  # minutes
    detour_cap: float = 0.20  # fraction of direct in-vehicle time
    tick_minutes: int = 1
    relocation_interval: int = 5  # minutes
    rng_seed: int = 0
    intrazonal_dist_factor: float = 0.5  # x sqrt(zone area) miles

    def validate(self) -> None:
        if not 0.0 <= self.market_penetration <= 1.0:
            raise ScenarioError("market_penetration must be in [0, 1]")
        if not 0.0 <= self.willingness_to_share <= 1.0:
            raise ScenarioError("willingness_to_share must be in [0, 1]")
        if self.max_wait_nonsharer <= 0:
            raise ScenarioError("max_wait_nonsharer must be positive")
        if self.detour_cap < 0:
            raise ScenarioError("detour_cap must be non-negative")
        if self.tick_minutes != 1:
            raise ScenarioError("only 1-minute ticks are supported")
        if self.relocation_interval < 1:
            raise ScenarioError("relocation_interval must be >= 1 minute")
        if self.intrazonal_dist_factor < 0:
            raise ScenarioError("intrazonal_dist_factor must be non-negative")


@dataclass(frozen=True)
class Scenario:
    city_id: str
    region: str
    zones: dict[str, Zone]
    network: Network
    od: dict[str, ODMatrix]  # period id -> matrix
    schedule: PeriodSchedule
    geometry: dict  # {"city": [rings], "zones": {id: [rings]}, "blocks": {id: [rings]}}
    flows: dict[tuple[str, str], float] | None = None  # block commute flows

    @property
    def zone_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.zones))

    @property
    def zone_index(self) -> dict[str, int]:
        return {z: i for i, z in enumerate(self.zone_ids)}

    @property
    def blocks(self) -> list[BlockGroupAttrs]:
        out: list[BlockGroupAttrs] = []
        for zid in self.zone_ids:
            out.extend(self.zones[zid].blocks)
        return out

    def zone_areas(self) -> np.ndarray:
        return np.array([self.zones[z].area for z in self.zone_ids])

    def od_dense(self, period: str) -> np.ndarray:
        """Dense per-period OD mean matrix ordered by sorted zone id."""
        idx = self.zone_index
        n = len(idx)
        mat = np.zeros((n, n))
        for (o, d), mean in self.od[period].entries.items():
            mat[idx[o], idx[d]] = mean
        return mat


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# File I/O

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def _parse_bool(text: str, where: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ScenarioError(f"{where}: expected true/false, got {text!r}")


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict[str, str]]:
    if not path.exists():
        raise ScenarioError(f"missing scenario file: {path.name}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ScenarioError(f"{path.name}: missing columns {missing}")
        return list(reader)


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario directory; raises ScenarioError naming the offending row."""
    root = Path(path)
    if not root.is_dir():
        raise ScenarioError(f"not a scenario directory: {root}")

    meta_path = root / "periods.json"
    if not meta_path.exists():
        raise ScenarioError("missing scenario file: periods.json")
    meta = json.loads(meta_path.read_text())
    for key in ("city_id", "region", "periods", "am_peak", "pm_peak"):
        if key not in meta:
            raise ScenarioError(f"periods.json: missing key {key!r}")
    schedule = PeriodSchedule(
        periods=tuple((p["id"], int(p["start"]), int(p["end"])) for p in meta["periods"]),
        am_peak=meta["am_peak"],
        pm_peak=meta["pm_peak"],
    )

    zone_rows = _read_csv(root / "zones.csv", ("id", "cx", "cy", "area"))
    zones_raw: dict[str, dict] = {}
    for i, row in enumerate(zone_rows):
        zid = row["id"]
        if zid in zones_raw:
            raise ScenarioError(f"zones.csv row {i + 2}: duplicate zone id {zid!r}")
        zones_raw[zid] = dict(
            cx=float(row["cx"]), cy=float(row["cy"]), area=float(row["area"])
        )

    block_rows = _read_csv(root / "blocks.csv", BLOCK_COLUMNS)
    blocks_by_zone: dict[str, list[BlockGroupAttrs]] = {z: [] for z in zones_raw}
    seen_blocks: set[str] = set()
    for i, row in enumerate(block_rows):
        bid = row["id"]
        if bid in seen_blocks:
            raise ScenarioError(f"blocks.csv row {i + 2}: duplicate block id {bid!r}")
        seen_blocks.add(bid)
        if row["zone_id"] not in zones_raw:
            raise ScenarioError(
                f"blocks.csv row {i + 2}: unknown zone {row['zone_id']!r}"
            )
        blocks_by_zone[row["zone_id"]].append(
            BlockGroupAttrs(
                id=bid,
                zone_id=row["zone_id"],
                cx=float(row["cx"]),
                cy=float(row["cy"]),
                area=float(row["area"]),
                population=float(row["pop"]),
                households=float(row["hh"]),
                housing_sf=float(row["h_sf"]),
                housing_mf=float(row["h_mf"]),
                workers=float(row["workers"]),
                **{s: float(row[s]) for s in JOB_SECTOR_FIELDS},
            )
        )

    node_rows = _read_csv(root / "nodes.csv", ("id", "x", "y"))
    nodes: dict[str, tuple[float, float]] = {}
    for i, row in enumerate(node_rows):
        nid = row["id"]
        if nid in nodes:
            raise ScenarioError(f"nodes.csv row {i + 2}: duplicate node id {nid!r}")
        nodes[nid] = (float(row["x"]), float(row["y"]))

    period_ids = schedule.ids
    tt_cols = tuple(f"tt_{p}" for p in period_ids)
    link_rows = _read_csv(
        root / "links.csv",
        ("from", "to", "length", "speed", "lanes", "ped_allowed") + tt_cols,
    )
    links: list[Link] = []
    for i, row in enumerate(link_rows):
        where = f"links.csv row {i + 2}"
        if row["from"] not in nodes:
            raise ScenarioError(f"{where}: unknown node {row['from']!r}")
        if row["to"] not in nodes:
            raise ScenarioError(f"{where}: unknown node {row['to']!r}")
        length = float(row["length"])
        if length <= 0:
            raise ScenarioError(f"{where}: non-positive length {length}")
        tts = {p: float(row[f"tt_{p}"]) for p in period_ids}
        for p, tt in tts.items():
            if tt <= 0:
                raise ScenarioError(f"{where}: non-positive tt_{p} {tt}")
        links.append(
            Link(
                from_node=row["from"],
                to_node=row["to"],
                length=length,
                speed_limit=float(row["speed"]),
                lanes_per_direction=int(row["lanes"]),
                pedestrian_allowed=_parse_bool(row["ped_allowed"], where),
                travel_time_by_period=tts,
            )
        )

    od: dict[str, ODMatrix] = {}
    for pid in period_ids:
        od_rows = _read_csv(root / f"od_{pid}.csv", ("o", "d", "mean_trips"))
        entries: dict[tuple[str, str], float] = {}
        for i, row in enumerate(od_rows):
            where = f"od_{pid}.csv row {i + 2}"
            if row["o"] not in zones_raw:
                raise ScenarioError(f"{where}: unknown zone {row['o']!r}")
            if row["d"] not in zones_raw:
                raise ScenarioError(f"{where}: unknown zone {row['d']!r}")
            entries[(row["o"], row["d"])] = float(row["mean_trips"])
        od[pid] = ODMatrix(period=pid, entries=entries)

    geom_path = root / "geometry.json"
    if not geom_path.exists():
        raise ScenarioError("missing scenario file: geometry.json")
    geometry = json.loads(geom_path.read_text())
    for key in ("city", "zones", "blocks"):
        if key not in geometry:
            raise ScenarioError(f"geometry.json: missing key {key!r}")

    flows = None
    flows_path = root / "flows.csv"
    if flows_path.exists():
        flow_rows = _read_csv(flows_path, ("home_block", "work_block", "count"))
        flows = {}
        for i, row in enumerate(flow_rows):
            where = f"flows.csv row {i + 2}"
            if row["home_block"] not in seen_blocks:
                raise ScenarioError(f"{where}: unknown block {row['home_block']!r}")
            if row["work_block"] not in seen_blocks:
                raise ScenarioError(f"{where}: unknown block {row['work_block']!r}")
            flows[(row["home_block"], row["work_block"])] = float(row["count"])

    zones = {
        zid: Zone(
            id=zid,
            blocks=tuple(blocks_by_zone[zid]),
            **zones_raw[zid],
        )
        for zid in sorted(zones_raw)
    }
    connector = {
        zid: _nearest_node(nodes, zones[zid].cx, zones[zid].cy) for zid in zones
    }
    network = Network(nodes=nodes, links=tuple(links), zone_connector=connector)
    return Scenario(
        city_id=meta["city_id"],
        region=meta["region"],
        zones=zones,
        network=network,
        od=od,
        schedule=schedule,
        geometry=geometry,
        flows=flows,
    )


def _nearest_node(nodes: dict[str, tuple[float, float]], x: float, y: float) -> str:
    if not nodes:
        raise ScenarioError("network has no nodes")
    best = min(nodes.items(), key=lambda kv: ((kv[1][0] - x) ** 2 + (kv[1][1] - y) ** 2, kv[0]))
    return best[0]


def write_scenario(scenario: Scenario, path: str | Path) -> None:
    """Write a scenario directory; load_scenario(write_scenario(s)) == s."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    with open(root / "zones.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("id", "cx", "cy", "area"))
        for zid in scenario.zone_ids:
            z = scenario.zones[zid]
            w.writerow((z.id, _fmt(z.cx), _fmt(z.cy), _fmt(z.area)))

    with open(root / "blocks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BLOCK_COLUMNS)
        for b in scenario.blocks:
            w.writerow(
                (
                    b.id,
                    b.zone_id,
                    _fmt(b.cx),
                    _fmt(b.cy),
                    _fmt(b.area),
                    _fmt(b.population),
                    _fmt(b.households),
                    _fmt(b.housing_sf),
                    _fmt(b.housing_mf),
                    _fmt(b.workers),
                )
                + tuple(_fmt(getattr(b, s)) for s in JOB_SECTOR_FIELDS)
            )

    with open(root / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("id", "x", "y"))
        for nid in sorted(scenario.network.nodes):
            x, y = scenario.network.nodes[nid]
            w.writerow((nid, _fmt(x), _fmt(y)))

    period_ids = scenario.schedule.ids
    with open(root / "links.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ("from", "to", "length", "speed", "lanes", "ped_allowed")
            + tuple(f"tt_{p}" for p in period_ids)
        )
        for ln in scenario.network.links:
            w.writerow(
                (
                    ln.from_node,
                    ln.to_node,
                    _fmt(ln.length),
                    _fmt(ln.speed_limit),
                    ln.lanes_per_direction,
                    _fmt(ln.pedestrian_allowed),
                )
                + tuple(_fmt(ln.travel_time_by_period[p]) for p in period_ids)
            )

    for pid in period_ids:
        with open(root / f"od_{pid}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("o", "d", "mean_trips"))
            for (o, d) in sorted(scenario.od[pid].entries):
                w.writerow((o, d, _fmt(scenario.od[pid].entries[(o, d)])))

    meta = {
        "city_id": scenario.city_id,
        "region": scenario.region,
        "am_peak": scenario.schedule.am_peak,
        "pm_peak": scenario.schedule.pm_peak,
        "periods": [
            {"id": pid, "start": start, "end": end}
            for pid, start, end in scenario.schedule.periods
        ],
    }
    (root / "periods.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    (root / "geometry.json").write_text(
        json.dumps(scenario.geometry, sort_keys=True) + "\n"
    )

    if scenario.flows is not None:
        with open(root / "flows.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("home_block", "work_block", "count"))
            for (h, wk) in sorted(scenario.flows):
                w.writerow((h, wk, _fmt(scenario.flows[(h, wk)])))


# ---------------------------------------------------------------------------
# Validation

def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Invariant sweep over an in-memory scenario. Violations are data, not errors."""
    report = ValidationReport()
    add = report.violations.append

    for zid in scenario.zone_ids:
        z = scenario.zones[zid]
        if not (z.area > 0 and math.isfinite(z.area)):
            add(f"zone {zid}: non-positive area {z.area}")
        if not (math.isfinite(z.cx) and math.isfinite(z.cy)):
            add(f"zone {zid}: non-finite centroid")
        for b in z.blocks:
            for name in ("population", "households", "housing_sf", "housing_mf", "workers"):
                if getattr(b, name) < 0:
                    add(f"block {b.id}: negative {name}")
            for s in JOB_SECTOR_FIELDS:
                if getattr(b, s) < 0:
                    add(f"block {b.id}: negative {s}")
            if b.area <= 0:
                add(f"block {b.id}: non-positive area {b.area}")

    # Period schedule must cover a full day without overlap.
    marks = np.zeros(MINUTES_PER_DAY, dtype=np.int64)
    for pid, start, end in scenario.schedule.periods:
        if not (0 <= start < end <= MINUTES_PER_DAY):
            add(f"period {pid}: bad window [{start}, {end})")
            continue
        marks[start:end] += 1
    if (marks > 1).any():
        add("periods overlap")
    if (marks == 0).any():
        add("periods do not cover the full day")
    if scenario.schedule.am_peak not in scenario.schedule.ids:
        add(f"unknown am_peak {scenario.schedule.am_peak!r}")
    if scenario.schedule.pm_peak not in scenario.schedule.ids:
        add(f"unknown pm_peak {scenario.schedule.pm_peak!r}")
    if scenario.schedule.am_peak == scenario.schedule.pm_peak:
        add("am_peak equals pm_peak")

    for ln in scenario.network.links:
        if ln.length <= 0:
            add(f"link {ln.from_node}->{ln.to_node}: non-positive length")
        for pid in scenario.schedule.ids:
            tt = ln.travel_time_by_period.get(pid)
            if tt is None or tt <= 0:
                add(f"link {ln.from_node}->{ln.to_node}: bad tt_{pid} {tt}")

    for pid in scenario.schedule.ids:
        if pid not in scenario.od:
            add(f"missing OD matrix for period {pid}")
            continue
        for (o, d), mean in scenario.od[pid].entries.items():
            if mean < 0:
                add(f"od_{pid} cell ({o}, {d}): negative mean {mean}")

    # Strong connectivity over the zone connector nodes.
    connectors = sorted(set(scenario.network.zone_connector.values()))
    if connectors:
        fwd: dict[str, list[str]] = {}
        rev: dict[str, list[str]] = {}
        for ln in scenario.network.links:
            fwd.setdefault(ln.from_node, []).append(ln.to_node)
            rev.setdefault(ln.to_node, []).append(ln.from_node)
        reach_f = _bfs(connectors[0], fwd)
        reach_r = _bfs(connectors[0], rev)
        for zid in scenario.zone_ids:
            c = scenario.network.zone_connector[zid]
            if c not in reach_f or c not in reach_r:
                add(f"zone {zid}: connector {c} not strongly connected")

    return report


def _bfs(start: str, adj: dict[str, list[str]]) -> set[str]:
    seen = {start}
    queue = [start]
    while queue:
        u = queue.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


# ---------------------------------------------------------------------------
# Synthetic grid-city generator

DEFAULT_PERIODS = (
    ("night", 0, 420),
    ("am", 420, 540),
    ("mid", 540, 960),
    ("pm", 960, 1080),
    ("eve", 1080, 1440),
)
DEFAULT_PERIOD_SHARES = {"night": 0.05, "am": 0.22, "mid": 0.33, "pm": 0.25, "eve": 0.15}
DEFAULT_CONGESTION = {"night": 1.0, "am": 1.35, "mid": 1.1, "pm": 1.3, "eve": 1.05}

# Five block archetypes matching the land-use mix entropy categories:
# single-family housing, multi-family housing, retail/service, professional,
# labor+resource.
_N_ARCHETYPES = 5


def generate_synthetic_city(
    n_zones_side: int,
    zone_size_miles: float = 1.0,
    base_od_rate: float = 50.0,
    density_multiplier: float = 1.0,
    diversity_mix: float = 1.0,
    extra_diagonal_links: bool = False,
    seed: int = 0,
    *,
    city_id: str = "synthetic",
    region: str = "R0",
    origin_xy: tuple[float, float] = (0.0, 0.0),
    streets_per_zone: int = 1,
    diagonal_fraction: float | None = None,
    street_speed_mph: float = 25.0,
    arterial_spacing: int = 0,
    arterial_speed_mph: float = 45.0,
    job_scale: float = 1.0,
    jitter: float = 0.1,
) -> Scenario:
    """Deterministic square grid city.

    n_zones_side x n_zones_side square zones; street grid at streets_per_zone
    resolution; OD means from a gravity model scaled linearly by
    density_multiplier; block land-use mix interpolates between fully
    segregated archetypes (diversity_mix=0) and a uniform mix (diversity_mix=1,
    every block's five mix shares exactly 0.2). diagonal_fraction in [0, 1]
    adds diagonal links to that share of street cells (extra_diagonal_links is
    shorthand for 1.0).
    """
    if n_zones_side < 1:
        raise ScenarioError("n_zones_side must be >= 1")
    if not 0.0 <= diversity_mix <= 1.0:
        raise ScenarioError("diversity_mix must be in [0, 1]")
    if streets_per_zone < 1:
        raise ScenarioError("streets_per_zone must be >= 1")
    if diagonal_fraction is None:
        diagonal_fraction = 1.0 if extra_diagonal_links else 0.0
    if not 0.0 <= diagonal_fraction <= 1.0:
        raise ScenarioError("diagonal_fraction must be in [0, 1]")

    rng = np.random.default_rng(seed)
    n = n_zones_side
    s = zone_size_miles
    x0, y0 = origin_xy

    zone_ids = [f"Z{r:02d}{c:02d}" for r in range(n) for c in range(n)]
    centroids = {
        f"Z{r:02d}{c:02d}": (x0 + (c + 0.5) * s, y0 + (r + 0.5) * s)
        for r in range(n)
        for c in range(n)
    }

    # Blocks: 2x2 per zone, archetypes cycling across all blocks so every
    # archetype appears in every neighborhood scale.
    base_total = 500.0
    arch_counter = 0
    blocks_by_zone: dict[str, list[BlockGroupAttrs]] = {}
    block_geoms: dict[str, list] = {}
    for r in range(n):
        for c in range(n):
            zid = f"Z{r:02d}{c:02d}"
            blocks_by_zone[zid] = []
            for br in range(2):
                for bc in range(2):
                    bid = f"{zid}B{br}{bc}"
                    factor = 1.0 + jitter * (2.0 * rng.random() - 1.0)
                    total = base_total * factor
                    cats = np.full(_N_ARCHETYPES, diversity_mix * total / 5.0)
                    cats[arch_counter % _N_ARCHETYPES] += (1.0 - diversity_mix) * total
                    arch_counter += 1
                    h_sf, h_mf, reserve, prof, laborres = cats
                    side_jobs = diversity_mix * (1.0 - diversity_mix) * total * 0.2
                    bx = x0 + (c + 0.25 + 0.5 * bc) * s
                    by = y0 + (r + 0.25 + 0.5 * br) * s
                    units = h_sf + h_mf
                    blocks_by_zone[zid].append(
                        BlockGroupAttrs(
                            id=bid,
                            zone_id=zid,
                            cx=bx,
                            cy=by,
                            area=(s / 2.0) ** 2,
                            population=2.5 * units,
                            households=units,
                            housing_sf=h_sf,
                            housing_mf=h_mf,
                            workers=1.125 * units,
                            job_reserve=reserve * job_scale,
                            job_prof=prof * job_scale,
                            job_labor=0.5 * laborres * job_scale,
                            job_resource=0.5 * laborres * job_scale,
                            job_office=side_jobs * job_scale,
                            job_industry=side_jobs * job_scale,
                            job_entertain=side_jobs * job_scale,
                        )
                    )
                    half = s / 4.0
                    block_geoms[bid] = [
                        [
                            [bx - half, by - half],
                            [bx + half, by - half],
                            [bx + half, by + half],
                            [bx - half, by + half],
                        ]
                    ]

    zones = {
        zid: Zone(
            id=zid,
            cx=centroids[zid][0],
            cy=centroids[zid][1],
            area=s * s,
            blocks=tuple(blocks_by_zone[zid]),
        )
        for zid in sorted(zone_ids)
    }

    # Street grid: one node per subcell center; axis links everywhere,
    # diagonals on the first ceil(fraction * cells) subcell squares in
    # row-major order. Arterials (every arterial_spacing-th row/column) get
    # the higher speed and two lanes per direction.
    k = streets_per_zone
    g = n * k
    h = s / k
    nodes: dict[str, tuple[float, float]] = {}
    for i in range(g):
        for j in range(g):
            nodes[f"N{i:03d}{j:03d}"] = (x0 + (j + 0.5) * h, y0 + (i + 0.5) * h)

    def is_arterial(i: int, j: int, horizontal: bool) -> bool:
        if arterial_spacing <= 0:
            return False
        return (i % arterial_spacing == 0) if horizontal else (j % arterial_spacing == 0)

    period_ids = [p[0] for p in DEFAULT_PERIODS]

    def make_links(a: str, b: str, length: float, fast: bool) -> list[Link]:
        speed = arterial_speed_mph if fast else street_speed_mph
        base_tt = length / speed * 60.0
        tts = {pid: base_tt * DEFAULT_CONGESTION[pid] for pid in period_ids}
        common = dict(
            length=length,
            speed_limit=speed,
            lanes_per_direction=2 if fast else 1,
            pedestrian_allowed=True,
            travel_time_by_period=tts,
        )
        return [Link(from_node=a, to_node=b, **common), Link(from_node=b, to_node=a, **common)]

    links: list[Link] = []
    for i in range(g):
        for j in range(g):
            here = f"N{i:03d}{j:03d}"
            if j + 1 < g:
                links.extend(make_links(here, f"N{i:03d}{j + 1:03d}", h, is_arterial(i, j, True)))
            if i + 1 < g:
                links.extend(make_links(here, f"N{i + 1:03d}{j:03d}", h, is_arterial(i, j, False)))
    n_cells = (g - 1) * (g - 1)
    n_diag = math.ceil(diagonal_fraction * n_cells) if n_cells else 0
    diag_len = h * math.sqrt(2.0)
    for cell in range(n_diag):
        i, j = divmod(cell, g - 1)
        links.extend(make_links(f"N{i:03d}{j:03d}", f"N{i + 1:03d}{j + 1:03d}", diag_len, False))
        links.extend(make_links(f"N{i + 1:03d}{j:03d}", f"N{i:03d}{j + 1:03d}", diag_len, False))

    # Gravity OD: production from households, attraction from jobs, decaying
    # with centroid distance; period totals follow the daily share profile.
    zid_sorted = sorted(zone_ids)
    hh = np.array([sum(b.households for b in zones[z].blocks) for z in zid_sorted])
    jobs = np.array([sum(b.job_all for b in zones[z].blocks) for z in zid_sorted])
    cx = np.array([zones[z].cx for z in zid_sorted])
    cy = np.array([zones[z].cy for z in zid_sorted])
    dist = np.hypot(cx[:, None] - cx[None, :], cy[:, None] - cy[None, :])
    scale_len = max(n * s / 3.0, 1e-9)
    gravity = (hh[:, None] + 1.0) * (jobs[None, :] + 1.0) * np.exp(-dist / scale_len)
    gravity = gravity * (1.0 + jitter * (2.0 * rng.random(gravity.shape) - 1.0))
    gravity = gravity / gravity.sum()
    daily_total = base_od_rate * n * n * density_multiplier

    od: dict[str, ODMatrix] = {}
    for pid in period_ids:
        mat = daily_total * DEFAULT_PERIOD_SHARES[pid] * gravity
        entries = {
            (zid_sorted[a], zid_sorted[b]): float(mat[a, b])
            for a in range(len(zid_sorted))
            for b in range(len(zid_sorted))
            if mat[a, b] > 0
        }
        od[pid] = ODMatrix(period=pid, entries=entries)

    # Commute flows between blocks for the travel-demand-weighted OD graph.
    all_blocks = [b for z in zid_sorted for b in zones[z].blocks]
    bx = np.array([b.cx for b in all_blocks])
    by = np.array([b.cy for b in all_blocks])
    bhh = np.array([b.households for b in all_blocks])
    bjobs = np.array([b.job_all for b in all_blocks])
    bdist = np.hypot(bx[:, None] - bx[None, :], by[:, None] - by[None, :])
    raw = (bhh[:, None] + 0.1) * (bjobs[None, :] + 0.1) * np.exp(-bdist / scale_len)
    total_workers = sum(b.workers for b in all_blocks)
    raw = raw / raw.sum() * total_workers
    flows: dict[tuple[str, str], float] = {}
    counts = np.floor(raw + 0.5)
    for a in range(len(all_blocks)):
        for b in range(len(all_blocks)):
            if counts[a, b] >= 1.0:
                flows[(all_blocks[a].id, all_blocks[b].id)] = float(counts[a, b])

    city_ring = [
        [x0, y0],
        [x0 + n * s, y0],
        [x0 + n * s, y0 + n * s],
        [x0, y0 + n * s],
    ]
    zone_geoms = {}
    for r in range(n):
        for c in range(n):
            zid = f"Z{r:02d}{c:02d}"
            zone_geoms[zid] = [
                [
                    [x0 + c * s, y0 + r * s],
                    [x0 + (c + 1) * s, y0 + r * s],
                    [x0 + (c + 1) * s, y0 + (r + 1) * s],
                    [x0 + c * s, y0 + (r + 1) * s],
                ]
            ]
    geometry = {"city": [city_ring], "zones": zone_geoms, "blocks": block_geoms}

    connector = {zid: _nearest_node(nodes, zones[zid].cx, zones[zid].cy) for zid in zones}
    network = Network(nodes=nodes, links=tuple(links), zone_connector=connector)
    schedule = PeriodSchedule(periods=DEFAULT_PERIODS, am_peak="am", pm_peak="pm")
    return Scenario(
        city_id=city_id,
        region=region,
        zones=zones,
        network=network,
        od=od,
        schedule=schedule,
        geometry=geometry,
        flows=flows,
    )
