"""Zone-to-zone skims: fixed fixtures, brute-force oracles, and invariants."""

from __future__ import annotations

import numpy as np
import pytest

from helpers import make_scenario
from savsim.router import build_skims
from savsim.scenario import ScenarioError


def _zi(skims, z):
    return skims.zone_ids.index(z)


# ---------------------------------------------------------------------------
# Fixed four-zone fixture


def test_adjacent_zones_cost_one_hop(grid4_skims):
    t, d = grid4_skims.lookup("A", "B", 60.0)
    assert t == pytest.approx(5.0, abs=1e-12)
    assert d == pytest.approx(1.0, abs=1e-12)


def test_opposite_corners_cost_two_hops(grid4_skims):
    t, d = grid4_skims.lookup("A", "D", 60.0)
    assert t == pytest.approx(10.0, abs=1e-12)
    assert d == pytest.approx(2.0, abs=1e-12)


def test_self_travel_is_free(grid4_skims):
    nz = len(grid4_skims.zone_ids)
    assert np.all(np.diagonal(grid4_skims.time, axis1=1, axis2=2) == 0.0)
    assert np.all(np.diag(grid4_skims.dist) == 0.0)
    assert grid4_skims.time.shape == (2, nz, nz)


def test_unknown_zone_raises(grid4_skims):
    with pytest.raises(ValueError):
        grid4_skims.lookup("A", "Z99", 60.0)


# ---------------------------------------------------------------------------
# Period handling


def test_lookup_uses_the_departure_minute_period():
    zone_xy = {"A": (0.0, 0.0), "B": (1.0, 0.0)}
    links = [
        ("A", "B", 1.0, {"am": 5.0, "pm": 7.0}),
        ("B", "A", 1.0, {"am": 5.0, "pm": 7.0}),
    ]
    sc = make_scenario(zone_xy, links, {})
    sk = build_skims(sc.network, sc.schedule)
    assert sk.lookup("A", "B", 100.0)[0] == pytest.approx(5.0)
    assert sk.lookup("A", "B", 719.0)[0] == pytest.approx(5.0)
    assert sk.lookup("A", "B", 720.0)[0] == pytest.approx(7.0)
    assert sk.lookup("A", "B", 1439.0)[0] == pytest.approx(7.0)
    # Distance is period-independent.
    assert sk.lookup("A", "B", 100.0)[1] == sk.lookup("A", "B", 800.0)[1]


def test_disconnected_network_is_rejected():
    zone_xy = {"A": (0.0, 0.0), "B": (1.0, 0.0)}
    links = [("A", "B", 1.0, 5.0)]  # no way back
    sc = make_scenario(zone_xy, links, {})
    with pytest.raises(ScenarioError, match="not strongly connected"):
        build_skims(sc.network, sc.schedule)


def test_build_is_deterministic(gen_city):
    a = build_skims(gen_city.network, gen_city.schedule)
    b = build_skims(gen_city.network, gen_city.schedule)
    assert np.array_equal(a.time, b.time)
    assert np.array_equal(a.dist, b.dist)
    assert a.zone_ids == b.zone_ids
    assert a.reference_period == b.reference_period


# ---------------------------------------------------------------------------
# Brute-force oracle on small random networks


def _enumerate_paths(adj, src, dst):
    """All simple paths src->dst as (time, length) via depth-first search."""
    out = []
    stack = [(src, frozenset([src]), 0.0, 0.0)]
    while stack:
        node, seen, t, d = stack.pop()
        if node == dst:
            out.append((t, d))
            continue
        for nxt, (tt, ln) in adj.get(node, {}).items():
            if nxt not in seen:
                stack.append((nxt, seen | {nxt}, t + tt, d + ln))
    return out


def _random_scenario(rng, n):
    names = [chr(ord("A") + i) for i in range(n)]
    zone_xy = {z: (float(i), float(rng.integers(0, 3))) for i, z in enumerate(names)}
    links = []
    pairs = set()

    def add(a, b):
        if a == b or (a, b) in pairs:
            return
        pairs.add((a, b))
        tt = float(rng.uniform(1.0, 9.0))
        ln = float(rng.uniform(0.3, 3.0))
        links.append((a, b, ln, tt))

    for i in range(n):  # ring keeps it strongly connected
        add(names[i], names[(i + 1) % n])
        add(names[(i + 1) % n], names[i])
    for _ in range(2 * n):
        add(names[rng.integers(0, n)], names[rng.integers(0, n)])
    return make_scenario(zone_xy, links, {}), links


def test_skims_match_exhaustive_path_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(12):
        n = int(rng.integers(4, 7))
        sc, links = _random_scenario(rng, n)
        sk = build_skims(sc.network, sc.schedule)
        adj: dict[str, dict[str, tuple[float, float]]] = {}
        for a, b, ln, tt in links:
            adj.setdefault(a, {})[b] = (float(tt), float(ln))
        for o in sc.zone_ids:
            for d in sc.zone_ids:
                if o == d:
                    continue
                paths = _enumerate_paths(adj, o, d)
                assert paths, f"no path {o}->{d}"
                best_t = min(t for t, _ in paths)
                t, dist = sk.lookup(o, d, 60.0)
                assert t == pytest.approx(best_t, abs=1e-9)
                # The reported distance must belong to a genuinely time-shortest path.
                lengths = {
                    round(ln, 9) for pt, ln in paths if pt <= best_t + 1e-9
                }
                assert round(dist, 9) in lengths


def test_triangle_inequality_every_period(gen_city_skims):
    time = gen_city_skims.time
    for p in range(time.shape[0]):
        t = time[p]
        via = t[:, :, None] + t[None, :, :]  # o->k->d
        best_via = via.min(axis=1)
        assert (t <= best_via + 1e-9).all()


def test_reference_period_prefers_off_peak(grid4_skims, gen_city_skims):
    # Two-period fixture: both periods are peaks, so the first one is used.
    assert grid4_skims.reference_period == "am"
    # Generated schedule has off-peak periods; the first non-peak wins.
    assert gen_city_skims.reference_period == "night"
