"""Urban-form measurement: entropy, clustering, accessibility, street features."""

from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import make_block
from savsim.scenario import Link, Network, generate_synthetic_city
from savsim.urbanform import (
    ACCESS_RADII,
    ACCESS_SECTORS,
    UrbanFormError,
    accessibility_counts,
    build_urbanform_vector,
    classify_intersections,
    job_house_entropy,
    read_urbanform_csv,
    urbanform_columns,
    weighted_global_clustering,
    write_urbanform_csv,
)


# ---------------------------------------------------------------------------
# Activity-mix entropy


def test_uniform_mix_entropy_value():
    blk = make_block(
        "Z00B00",
        0.0,
        0.0,
        housing_sf=20,
        housing_mf=20,
        job_reserve=20,
        job_prof=20,
        job_labor=10,
        job_resource=10,
        job_office=0,
        job_industry=0,
        job_entertain=0,
    )
    want = -math.log(0.21) / math.log(5.0)
    got = job_house_entropy(blk)
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(0.9697, abs=1e-4)


def test_single_use_block_entropy_is_slightly_negative():
    blk = make_block(
        "Z00B01",
        0.0,
        0.0,
        housing_sf=50,
        housing_mf=0,
        job_reserve=0,
        job_prof=0,
        job_labor=0,
        job_resource=0,
    )
    want = -math.log(1.01) / math.log(5.0)
    got = job_house_entropy(blk)
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(-0.006183, abs=1e-6)
    assert got < 0


def test_empty_block_entropy_is_an_error():
    blk = make_block(
        "Z00B02",
        0.0,
        0.0,
        housing_sf=0,
        housing_mf=0,
        job_reserve=0,
        job_prof=0,
        job_labor=0,
        job_resource=0,
    )
    with pytest.raises(UrbanFormError, match="entropy undefined"):
        job_house_entropy(blk)


# ---------------------------------------------------------------------------
# Weighted clustering


def _oracle_clustering(w: np.ndarray) -> float | None:
    """Triplet-by-triplet enumeration; value of a triplet = mean edge weight."""
    w = np.asarray(w, dtype=float)
    w = w + w.T
    np.fill_diagonal(w, 0.0)
    n = w.shape[0]
    total = 0.0
    closed = 0.0
    for c in range(n):
        nbrs = [j for j in range(n) if w[c, j] > 0]
        for x in range(len(nbrs)):
            for y in range(x + 1, len(nbrs)):
                j, k = nbrs[x], nbrs[y]
                val = (w[c, j] + w[c, k]) / 2.0
                total += val
                if w[j, k] > 0:
                    closed += val
    if total <= 0:
        return None
    return closed / total


def test_triangle_clusters_fully():
    w = np.ones((3, 3)) - np.eye(3)
    assert weighted_global_clustering(w) == 1.0


def test_star_never_closes():
    w = np.zeros((4, 4))
    w[0, 1] = w[0, 2] = w[0, 3] = 1.0
    assert weighted_global_clustering(w) == 0.0


def test_triangle_with_pendant_matches_enumeration():
    w = np.zeros((4, 4))
    for a, b in ((0, 1), (1, 2), (0, 2), (0, 3)):
        w[a, b] = 1.0
    got = weighted_global_clustering(w)
    want = _oracle_clustering(w)
    assert got == pytest.approx(want, abs=1e-12)
    assert 0.0 < got < 1.0


def test_random_weighted_graphs_match_enumeration():
    rng = np.random.default_rng(7)
    tested = 0
    for _ in range(25):
        n = int(rng.integers(4, 7))
        w = rng.uniform(0.0, 5.0, size=(n, n))
        w[rng.random((n, n)) < 0.5] = 0.0
        want = _oracle_clustering(w.copy())
        if want is None:
            with pytest.raises(UrbanFormError, match="no triplets"):
                weighted_global_clustering(w)
            continue
        got = weighted_global_clustering(w)
        assert got == pytest.approx(want, abs=1e-12)
        tested += 1
    assert tested >= 10


def test_clustering_is_scale_invariant():
    rng = np.random.default_rng(8)
    w = rng.uniform(0.0, 2.0, size=(6, 6))
    w[rng.random((6, 6)) < 0.4] = 0.0
    if _oracle_clustering(w.copy()) is None:  # pragma: no cover - seed dependent
        pytest.skip("degenerate draw")
    assert weighted_global_clustering(17.0 * w) == pytest.approx(
        weighted_global_clustering(w), abs=1e-12
    )


def test_clustering_input_errors():
    with pytest.raises(UrbanFormError, match="square"):
        weighted_global_clustering(np.ones((2, 3)))
    with pytest.raises(UrbanFormError, match="non-negative"):
        weighted_global_clustering(np.array([[0.0, -1.0], [1.0, 0.0]]))
    with pytest.raises(UrbanFormError, match="no triplets"):
        weighted_global_clustering(np.array([[0.0, 1.0], [1.0, 0.0]]))


# ---------------------------------------------------------------------------
# Accessibility


def test_accessibility_counts_fixed_geometry():
    blocks = [
        make_block("B0", 0.0, 0.0, job_reserve=10.0),
        make_block("B1", 4.0, 0.0, job_reserve=7.0),
        make_block("B2", 0.0, 12.0, job_reserve=5.0),
    ]
    counts = accessibility_counts(blocks, "job_reserve")
    radii = list(ACCESS_RADII)
    assert counts.shape == (3, len(radii))
    r1, r5, r20 = radii.index(1), radii.index(5), radii.index(20)
    assert counts[0, r1] == 10.0  # a block always reaches itself
    assert counts[0, r5] == 17.0  # plus the neighbor four miles out
    assert counts[0, r20] == 22.0  # the whole city
    assert counts[1, r1] == 7.0
    assert counts[2, r1] == 5.0


def test_accessibility_radius_boundary_is_inclusive():
    blocks = [
        make_block("B0", 0.0, 0.0, job_reserve=1.0),
        make_block("B1", 3.0, 0.0, job_reserve=2.0),
    ]
    counts = accessibility_counts(blocks, "job_reserve", radii=(3.0,))
    assert counts[0, 0] == 3.0


def test_accessibility_matches_brute_force_and_is_monotone():
    rng = np.random.default_rng(12)
    blocks = [
        make_block(f"B{i}", float(rng.uniform(0, 30)), float(rng.uniform(0, 30)),
                   job_reserve=float(rng.uniform(0, 50)))
        for i in range(20)
    ]
    counts = accessibility_counts(blocks, "job_reserve")
    for i, b in enumerate(blocks):
        prev = -1.0
        for k, r in enumerate(ACCESS_RADII):
            manual = sum(
                o.job_reserve
                for o in blocks
                if (o.cx - b.cx) ** 2 + (o.cy - b.cy) ** 2 <= r * r
            )
            assert counts[i, k] == pytest.approx(manual, rel=1e-12)
            assert counts[i, k] >= prev
            prev = counts[i, k]


# ---------------------------------------------------------------------------
# Intersections and network density


def _net(links):
    nodes = {}
    for ln in links:
        nodes.setdefault(ln.from_node, (0.0, 0.0))
        nodes.setdefault(ln.to_node, (0.0, 0.0))
    return Network(nodes=nodes, links=tuple(links), zone_connector={})


def _mklink(a, b, speed=25.0, lanes=1, ped=True, length=1.0):
    return Link(a, b, length, speed, lanes, ped, {"am": 2.0})


def test_three_slow_walkable_legs_make_a_ped_intersection():
    links = []
    for leaf in ("A", "B", "C"):
        links.append(_mklink("H", leaf))
        links.append(_mklink(leaf, "H"))
    counts = classify_intersections(_net(links))
    assert counts == {"ped_3leg": 1, "ped_4leg": 0, "nonauto_total": 1, "auto_total": 0}


def test_four_legs_and_any_fast_link_flip_the_orientation():
    links = []
    for leaf in ("A", "B", "C", "D"):
        links.append(_mklink("H", leaf))
        links.append(_mklink(leaf, "H"))
    counts = classify_intersections(_net(links))
    assert counts["ped_4leg"] == 1 and counts["auto_total"] == 0

    fast = [_mklink("H", "A", speed=50.0), _mklink("A", "H", speed=50.0)]
    for leaf in ("B", "C", "D"):
        fast.append(_mklink("H", leaf))
        fast.append(_mklink(leaf, "H"))
    counts = classify_intersections(_net(fast))
    assert counts["auto_total"] == 1
    assert counts["nonauto_total"] == 0 and counts["ped_4leg"] == 0


def test_midspeed_walkable_legs_are_nonauto_but_not_ped():
    links = []
    for leaf in ("A", "B", "C"):
        links.append(_mklink("H", leaf, speed=35.0))
        links.append(_mklink(leaf, "H", speed=35.0))
    counts = classify_intersections(_net(links))
    assert counts["nonauto_total"] == 1
    assert counts["ped_3leg"] == 0 and counts["auto_total"] == 0


def test_wide_or_pedestrian_closed_links_read_as_auto():
    wide = []
    for leaf in ("A", "B", "C"):
        wide.append(_mklink("H", leaf, lanes=4))
        wide.append(_mklink(leaf, "H", lanes=4))
    assert classify_intersections(_net(wide))["auto_total"] == 1

    closed = []
    for leaf in ("A", "B", "C"):
        closed.append(_mklink("H", leaf, ped=False))
        closed.append(_mklink(leaf, "H", ped=False))
    assert classify_intersections(_net(closed))["auto_total"] == 1


def test_pass_through_nodes_are_not_intersections():
    links = [
        _mklink("A", "B"),
        _mklink("B", "A"),
        _mklink("B", "C"),
        _mklink("C", "B"),
    ]
    counts = classify_intersections(_net(links))
    assert counts == {"ped_3leg": 0, "ped_4leg": 0, "nonauto_total": 0, "auto_total": 0}


# ---------------------------------------------------------------------------
# Whole-city vector


def test_city_vector_densities_are_exact(gen_city):
    vec = build_urbanform_vector(gen_city)
    blocks = list(gen_city.blocks)
    area = 9.0  # nine one-square-mile zones
    assert vec.values["landSqml"] == pytest.approx(area)
    assert vec.values["popDen"] == pytest.approx(sum(b.population for b in blocks) / area)
    assert vec.values["jobDen"] == pytest.approx(sum(b.job_all for b in blocks) / area)
    assert vec.values["workerDen"] == pytest.approx(sum(b.workers for b in blocks) / area)


def test_city_vector_speed_comes_from_morning_congestion(gen_city):
    vec = build_urbanform_vector(gen_city)
    # Every street in this city is 25 mph with a 1.35 morning congestion
    # factor, so the realized speed is uniform.
    want = 25.0 / 1.35
    assert vec.values["speedAve"] == pytest.approx(want, rel=1e-12)
    assert vec.values["speedMedian"] == pytest.approx(want, rel=1e-12)


def test_city_vector_entropy_aggregates_block_entropies(gen_city):
    vec = build_urbanform_vector(gen_city)
    ents = [job_house_entropy(b) for b in gen_city.blocks]
    assert vec.values["jobHouseEntropyMed"] == pytest.approx(float(np.median(ents)))
    assert vec.values["jobHouseEntropyMean"] == pytest.approx(float(np.mean(ents)))


def test_city_vector_flow_clustering_present(gen_city):
    vec = build_urbanform_vector(gen_city)
    assert vec.values["odCluster"] is not None
    assert 0.0 <= vec.values["odCluster"] <= 1.0
    assert vec.flags == []


def test_city_without_flows_is_flagged(gen_city):
    import dataclasses

    flowless = dataclasses.replace(gen_city, flows=None)
    vec = build_urbanform_vector(flowless)
    assert vec.values["odCluster"] is None
    assert any(f.startswith("odCluster:") for f in vec.flags)


def test_city_without_blocks_is_an_error(grid4):
    with pytest.raises(UrbanFormError, match="no block groups"):
        build_urbanform_vector(grid4)


def test_vector_covers_every_column(gen_city):
    vec = build_urbanform_vector(gen_city)
    cols = urbanform_columns()
    assert set(vec.values) == set(cols)
    # Accessibility blocks: one Med and one Mean per sector and radius.
    assert len(cols) == 5 + len(ACCESS_SECTORS) * len(ACCESS_RADII) * 2 + 12


def test_urbanform_csv_round_trip(gen_city, tmp_path):
    import dataclasses

    flowless = dataclasses.replace(gen_city, city_id="noflow", flows=None)
    vecs = [build_urbanform_vector(gen_city), build_urbanform_vector(flowless)]
    path = tmp_path / "uf.csv"
    write_urbanform_csv(vecs, path)
    back = read_urbanform_csv(path)
    assert len(back) == 2
    for orig, rt in zip(vecs, back):
        assert rt.city_id == orig.city_id
        assert rt.region == orig.region
        assert rt.flags == orig.flags
        for col, val in orig.values.items():
            if val is None:
                assert rt.values[col] is None
            else:
                assert rt.values[col] == val  # repr round trip is exact
