"""City-level built-environment measurement.

Produces one vector per city: activity densities, job accessibility by
sector within fixed radii, land-use mix entropy, street-network design
measures (intersection classes, network mileage densities, AM link speeds),
and a commute-flow clustering coefficient — the independent variables for
the cross-city regressions, aggregated to the city by median and mean where
the measure is block- or link-level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import BlockGroupAttrs, Network, Scenario

ACCESS_RADII = (1.0, 3.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0)

# Accessibility sectors and the block attribute each one counts. The block
# schema carries a single retail/service job field, so the service and
# retail sectors read the same attribute (their columns are collinear by
# construction and at most one can enter a regression).
ACCESS_SECTORS = (
    ("jobService", "job_reserve"),
    ("jobRetail", "job_reserve"),
    ("jobOffice", "job_office"),
    ("jobIndust", "job_industry"),
    ("jobEntertain", "job_entertain"),
)

AUTO_SPEED_MPH = 41.0  # any faster incident link makes a node auto-oriented
AUTO_LANES = 4
PED_SPEED_MPH = 30.0  # all incident links slower: pedestrian-oriented


class UrbanFormError(Exception):
    pass


# ---------------------------------------------------------------------------
# Land-use mix entropy

def job_house_entropy(block: BlockGroupAttrs) -> float:
    """Five-way activity-mix entropy of one block group.

    Shares over (single-family housing, multi-family housing, retail/service
    jobs, professional jobs, labor-intensive plus resource jobs), denominator
    = housing units + all jobs. Each share enters as -p*ln(p + 0.01)/ln(5);
    the smoothing makes a perfectly uniform mix come out near (not at) 1 and
    a single-use block slightly negative.
    """
    total = block.housing_sf + block.housing_mf + block.job_all
    if total <= 0:
        raise UrbanFormError(f"block {block.id}: no housing or jobs, entropy undefined")
    shares = (
        block.housing_sf / total,
        block.housing_mf / total,
        block.job_reserve / total,
        block.job_prof / total,
        (block.job_labor + block.job_resource) / total,
    )
    return -sum(p * math.log(p + 0.01) for p in shares) / math.log(5.0)


# ---------------------------------------------------------------------------
# Commute-flow clustering

def weighted_global_clustering(weights: np.ndarray) -> float:
    """Global clustering of a weighted graph, triplet value = mean edge weight.

    The input is a (possibly directed) non-negative weight matrix; it is
    symmetrized as w' = w + w^T and self-loops are dropped. A triplet is a
    center node with two distinct neighbors; its value is the mean of the two
    edge weights; the coefficient is the value-sum over closed triplets (the
    outer pair also adjacent) divided by the value-sum over all triplets.
    With equal weights this reduces to the binary transitivity ratio.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise UrbanFormError("clustering needs a square weight matrix")
    if (w < 0).any():
        raise UrbanFormError("clustering weights must be non-negative")
    w = w + w.T
    np.fill_diagonal(w, 0.0)
    a = (w > 0).astype(float)
    deg = a.sum(axis=1)
    strength = w.sum(axis=1)
    total = 0.5 * float(((deg - 1.0) * strength)[deg >= 2].sum())
    if total <= 0:
        raise UrbanFormError("graph has no triplets; clustering undefined")
    closed = 0.5 * float((w * (a @ a)).sum())
    return closed / total


def flow_matrix(scenario: Scenario) -> tuple[np.ndarray, list[str]]:
    """Dense commute-flow matrix over the city's block ids (sorted)."""
    if scenario.flows is None:
        raise UrbanFormError(f"city {scenario.city_id}: no commute flows")
    ids = sorted(b.id for b in scenario.blocks)
    idx = {b: i for i, b in enumerate(ids)}
    mat = np.zeros((len(ids), len(ids)))
    for (h, wk), count in scenario.flows.items():
        if h in idx and wk in idx:
            mat[idx[h], idx[wk]] += count
    return mat, ids


# ---------------------------------------------------------------------------
# Accessibility

def accessibility_counts(
    blocks: list[BlockGroupAttrs], attr: str, radii: tuple[float, ...] = ACCESS_RADII
) -> np.ndarray:
    """Jobs of one sector reachable within each radius of each block centroid.

    Euclidean centroid-to-centroid distances; a block always reaches itself.
    Returns an array of shape (n_blocks, n_radii), monotone along radii.
    """
    if not blocks:
        return np.empty((0, len(radii)))
    xy = np.array([(b.cx, b.cy) for b in blocks])
    jobs = np.array([getattr(b, attr) for b in blocks])
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    out = np.empty((len(blocks), len(radii)))
    for k, r in enumerate(radii):
        out[:, k] = (jobs[None, :] * (d2 <= r * r)).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# Street-network measures

def _undirected_links(network: Network) -> list:
    seen = set()
    out = []
    for link in network.links:
        key = tuple(sorted((link.from_node, link.to_node)))
        if key in seen:
            continue
        seen.add(key)
        out.append(link)
    return out


def _is_auto_link(link) -> bool:
    return (
        link.speed_limit > AUTO_SPEED_MPH
        or link.lanes_per_direction >= AUTO_LANES
        or not link.pedestrian_allowed
    )


def _is_ped_link(link) -> bool:
    return link.pedestrian_allowed and link.speed_limit < PED_SPEED_MPH


def classify_intersections(network: Network) -> dict[str, int]:
    """Count intersections (degree >= 3) by orientation.

    A node is auto-oriented when any incident link is fast (> 41 mph), wide
    (>= 4 lanes per direction), or closed to pedestrians; that takes
    precedence. It is pedestrian-oriented when every incident link is slow
    (< 30 mph) and walkable, split 3-leg (degree exactly 3) vs 4-leg (degree
    4 or more). nonauto counts every non-auto intersection.
    """
    incident: dict[str, list] = {}
    neighbors: dict[str, set] = {}
    for link in network.links:
        incident.setdefault(link.from_node, []).append(link)
        incident.setdefault(link.to_node, []).append(link)
        neighbors.setdefault(link.from_node, set()).add(link.to_node)
        neighbors.setdefault(link.to_node, set()).add(link.from_node)
    counts = {"ped_3leg": 0, "ped_4leg": 0, "nonauto_total": 0, "auto_total": 0}
    for node, nbrs in neighbors.items():
        degree = len(nbrs)
        if degree < 3:
            continue
        links = incident[node]
        if any(_is_auto_link(l) for l in links):
            counts["auto_total"] += 1
            continue
        counts["nonauto_total"] += 1
        if all(_is_ped_link(l) for l in links):
            if degree == 3:
                counts["ped_3leg"] += 1
            else:
                counts["ped_4leg"] += 1
    return counts


def link_speeds_am(network: Network, am_period: str) -> np.ndarray:
    """Realized AM speed (mph) of each directed link."""
    speeds = []
    for link in network.links:
        tt = link.travel_time_by_period[am_period]
        speeds.append(link.length / tt * 60.0)
    return np.array(speeds)


# ---------------------------------------------------------------------------
# City vector

@dataclass
class UrbanFormVector:
    city_id: str
    region: str
    values: dict[str, float | None]
    flags: list[str] = field(default_factory=list)


def urbanform_columns() -> list[str]:
    cols = ["popDen", "hhDen", "hsDen", "workerDen", "jobDen"]
    for sector, _ in ACCESS_SECTORS:
        for r in ACCESS_RADII:
            cols.append(f"{sector}{int(r)}Med")
            cols.append(f"{sector}{int(r)}Mean")
    cols += [
        "intersect3DenPed",
        "intersect4DenPed",
        "intersectDenNonAuto",
        "intersectDenAuto",
        "netDenPed",
        "netDenAuto",
        "odCluster",
        "jobHouseEntropyMed",
        "jobHouseEntropyMean",
        "landSqml",
        "speedAve",
        "speedMedian",
    ]
    return cols


def build_urbanform_vector(scenario: Scenario) -> UrbanFormVector:
    """Assemble the full per-city vector; metric failures flag, not raise."""
    flags: list[str] = []
    blocks = list(scenario.blocks)
    if not blocks:
        raise UrbanFormError(f"city {scenario.city_id}: no block groups")
    area = float(scenario.zone_areas().sum())
    if area <= 0:
        raise UrbanFormError(f"city {scenario.city_id}: zero land area")
    values: dict[str, float | None] = {}
    values["popDen"] = sum(b.population for b in blocks) / area
    values["hhDen"] = sum(b.households for b in blocks) / area
    values["hsDen"] = sum(b.housing_sf + b.housing_mf for b in blocks) / area
    values["workerDen"] = sum(b.workers for b in blocks) / area
    values["jobDen"] = sum(b.job_all for b in blocks) / area

    for sector, attr in ACCESS_SECTORS:
        counts = accessibility_counts(blocks, attr)
        for k, r in enumerate(ACCESS_RADII):
            col = counts[:, k]
            values[f"{sector}{int(r)}Med"] = float(np.median(col))
            values[f"{sector}{int(r)}Mean"] = float(col.mean())

    inter = classify_intersections(scenario.network)
    values["intersect3DenPed"] = inter["ped_3leg"] / area
    values["intersect4DenPed"] = inter["ped_4leg"] / area
    values["intersectDenNonAuto"] = inter["nonauto_total"] / area
    values["intersectDenAuto"] = inter["auto_total"] / area

    undirected = _undirected_links(scenario.network)
    values["netDenPed"] = sum(l.length for l in undirected if _is_ped_link(l)) / area
    values["netDenAuto"] = sum(l.length for l in undirected if _is_auto_link(l)) / area

    try:
        mat, _ = flow_matrix(scenario)
        values["odCluster"] = weighted_global_clustering(mat)
    except UrbanFormError as exc:
        values["odCluster"] = None
        flags.append(f"odCluster:{exc}")

    entropies = []
    skipped = 0
    for b in blocks:
        try:
            entropies.append(job_house_entropy(b))
        except UrbanFormError:
            skipped += 1
    if skipped:
        flags.append(f"entropy_excluded:{skipped}")
    if entropies:
        arr = np.array(entropies)
        values["jobHouseEntropyMed"] = float(np.median(arr))
        values["jobHouseEntropyMean"] = float(arr.mean())
    else:
        values["jobHouseEntropyMed"] = None
        values["jobHouseEntropyMean"] = None
        flags.append("entropy_undefined")

    values["landSqml"] = area
    speeds = link_speeds_am(scenario.network, scenario.schedule.am_peak)
    values["speedAve"] = float(speeds.mean())
    values["speedMedian"] = float(np.median(speeds))
    return UrbanFormVector(
        city_id=scenario.city_id, region=scenario.region, values=values, flags=flags
    )


def write_urbanform_csv(vectors: list[UrbanFormVector], path) -> None:
    cols = urbanform_columns()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["city_id", "region"] + cols + ["flags"]) + "\n")
        for v in vectors:
            cells = [v.city_id, v.region]
            for c in cols:
                val = v.values.get(c)
                cells.append("" if val is None else repr(float(val)))
            cells.append(";".join(v.flags))
            fh.write(",".join(cells) + "\n")


def read_urbanform_csv(path) -> list[UrbanFormVector]:
    import csv

    cols = urbanform_columns()
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values = {
                c: (float(row[c]) if row.get(c) not in (None, "") else None)
                for c in cols
            }
            out.append(
                UrbanFormVector(
                    city_id=row["city_id"],
                    region=row["region"],
                    values=values,
                    flags=[f for f in row.get("flags", "").split(";") if f],
                )
            )
    return out
