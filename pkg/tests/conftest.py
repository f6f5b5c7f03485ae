"""Session fixtures: hand-built grid, generated cities, and a large shared run."""

from __future__ import annotations

import pytest

from helpers import make_scenario
from savsim.demand import default_departure_histogram
from savsim.engine import run_simulation
from savsim.router import build_skims
from savsim.scenario import SimConfig, generate_synthetic_city


@pytest.fixture(scope="session")
def grid4():
    """Four zones on a unit square; every edge link is 5 minutes / 1 mile.

    Opposite corners have no direct link, so their shortest path is two hops:
    10 minutes / 2 miles.
    """
    zone_xy = {"A": (0.0, 0.0), "B": (1.0, 0.0), "C": (0.0, 1.0), "D": (1.0, 1.0)}
    edges = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]
    links = []
    for a, b in edges:
        links.append((a, b, 1.0, 5.0))
        links.append((b, a, 1.0, 5.0))
    od = {"am": {("A", "D"): 2.0, ("B", "C"): 1.0}, "pm": {("D", "A"): 2.0}}
    return make_scenario(zone_xy, links, od)


@pytest.fixture(scope="session")
def grid4_skims(grid4):
    return build_skims(grid4.network, grid4.schedule)


@pytest.fixture(scope="session")
def gen_city():
    """A 3x3 generated city, small enough for fast engine runs."""
    return generate_synthetic_city(3, base_od_rate=40.0, seed=11, city_id="gen3")


@pytest.fixture(scope="session")
def gen_city_skims(gen_city):
    return build_skims(gen_city.network, gen_city.schedule)


@pytest.fixture(scope="session")
def big_run():
    """One metered day at roughly 10,000 requests, shared across audit tests."""
    sc = generate_synthetic_city(
        5,
        base_od_rate=400.0,
        diversity_mix=0.7,
        seed=42,
        city_id="bigcity",
        streets_per_zone=2,
        diagonal_fraction=0.25,
    )
    sk = build_skims(sc.network, sc.schedule)
    cfg = SimConfig()
    res = run_simulation(sc, sk, cfg, 4242, default_departure_histogram())
    return sc, sk, cfg, res
