"""Boundary alignment between analysis zones/blocks and a city outline.

A city's administrative outline rarely matches the tiling of travel-analysis
zones or census block groups, so the study area is assembled by majority
area: a zone or block is attached to the city when at least half of its area
falls inside the outline (inclusive, threshold exposed). Cities themselves
are kept only when the aligned area is substantial: more than a minimum
number of zones and more than a minimum share of regional trips staying
inside the aligned zone set.

Polygons are planar (coordinates in miles), possibly multi-ring with
even-odd filling: a polygon is the symmetric difference of its rings, so a
ring inside another ring is a hole.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from shapely.geometry import Polygon
from shapely.ops import unary_union

from .scenario import Scenario


class GeoAlignError(Exception):
    pass


@dataclass
class CityGeometry:
    city_id: str
    city_rings: list  # list of rings, each a list of [x, y]
    zones: dict[str, list]  # zone id -> rings
    blocks: dict[str, list]  # block id -> rings


@dataclass
class AlignmentResult:
    selected_zones: list[str]
    selected_blocks: list[str]
    coverage_ratio: float  # selected area inside city / city area
    spill_ratio: float  # selected area outside city / selected area


def polygon_from_rings(rings: list, feature: str) -> Polygon:
    """Even-odd polygon: symmetric difference of the rings."""
    if not rings:
        raise GeoAlignError(f"{feature}: no rings")
    shape = None
    for k, ring in enumerate(rings):
        if len(ring) < 3:
            raise GeoAlignError(f"{feature}: ring {k} has fewer than 3 points")
        poly = Polygon([(float(x), float(y)) for x, y in ring])
        if not poly.is_valid or poly.area <= 0:
            raise GeoAlignError(f"{feature}: ring {k} is degenerate")
        shape = poly if shape is None else shape.symmetric_difference(poly)
    if shape.area <= 0:
        raise GeoAlignError(f"{feature}: zero-area polygon")
    return shape


def geometry_from_scenario(scenario: Scenario) -> CityGeometry:
    geom = scenario.geometry
    return CityGeometry(
        city_id=scenario.city_id,
        city_rings=geom["city"],
        zones=dict(geom["zones"]),
        blocks=dict(geom.get("blocks", {})),
    )


def align_boundary(
    geom: CityGeometry, overlap_threshold: float = 0.5
) -> AlignmentResult:
    """Majority-area selection of zones and blocks against the city outline.

    A feature is selected iff area(feature ∩ city) / area(feature) meets the
    threshold (inclusive). Coverage and spill ratios are computed from the
    union of the selected zones.
    """
    city = polygon_from_rings(geom.city_rings, f"city {geom.city_id}")

    def pick(features: dict[str, list], kind: str) -> list[str]:
        chosen = []
        for fid in sorted(features):
            poly = polygon_from_rings(features[fid], f"{kind} {fid}")
            frac = poly.intersection(city).area / poly.area
            if frac >= overlap_threshold - 1e-12:
                chosen.append(fid)
        return chosen

    zones = pick(geom.zones, "zone")
    blocks = pick(geom.blocks, "block")

    if zones:
        selected = unary_union(
            [polygon_from_rings(geom.zones[z], f"zone {z}") for z in zones]
        )
        inside = selected.intersection(city).area
        coverage = inside / city.area
        spill = (selected.area - inside) / selected.area
    else:
        coverage = 0.0
        spill = 0.0
    return AlignmentResult(
        selected_zones=zones,
        selected_blocks=blocks,
        coverage_ratio=float(coverage),
        spill_ratio=float(spill),
    )


def intra_city_trip_share(scenario: Scenario, selected_zones: list[str]) -> float:
    """Trips staying inside the selected zones / trips touching them at all.

    Sums OD matrix means over every period: numerator requires both
    endpoints selected, denominator at least one.
    """
    if not selected_zones:
        raise GeoAlignError("no zones selected; intra-city share undefined")
    chosen = set(selected_zones)
    both = 0.0
    touch = 0.0
    for period in scenario.schedule.ids:
        for (o, d), mean in scenario.od[period].entries.items():
            o_in = o in chosen
            d_in = d in chosen
            if o_in or d_in:
                touch += mean
            if o_in and d_in:
                both += mean
    if touch <= 0:
        raise GeoAlignError("no trips touch the selected zones; share undefined")
    return both / touch


@dataclass
class CitySelection:
    city_id: str
    n_zones: int
    share: float
    accepted: bool
    reasons: list[str] = field(default_factory=list)


def select_cities(
    candidates: list[tuple[str, AlignmentResult, float]],
    share_threshold: float = 0.20,
    min_zones: int = 10,
) -> list[CitySelection]:
    """Keep a city iff it has more than `min_zones` zones (strict) and more
    than `share_threshold` of its trips internal (strict)."""
    out = []
    for city_id, alignment, share in candidates:
        n = len(alignment.selected_zones)
        reasons = []
        if n <= min_zones:
            reasons.append(f"zones {n} <= {min_zones}")
        if share <= share_threshold:
            reasons.append(f"intra share {share} <= {share_threshold}")
        out.append(
            CitySelection(
                city_id=city_id,
                n_zones=n,
                share=share,
                accepted=not reasons,
                reasons=reasons,
            )
        )
    return out


def write_selection_csv(selections: list[CitySelection], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("city_id,n_zones,share,accepted,reasons\n")
        for s in selections:
            fh.write(
                f"{s.city_id},{s.n_zones},{repr(float(s.share))},"
                f"{'true' if s.accepted else 'false'},{';'.join(s.reasons)}\n"
            )
