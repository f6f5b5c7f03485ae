"""Scenario model: I/O round trips, loader errors, validation, and the generator."""

from __future__ import annotations

import filecmp
from pathlib import Path

import pytest

from helpers import make_scenario
from savsim.scenario import (
    JOB_SECTOR_FIELDS,
    Link,
    Network,
    ODMatrix,
    PeriodSchedule,
    Scenario,
    ScenarioError,
    SimConfig,
    generate_synthetic_city,
    load_scenario,
    validate_scenario,
    write_scenario,
)


# ---------------------------------------------------------------------------
# Loading and writing


def _write_city(tmp_path: Path, **kwargs) -> tuple[Scenario, Path]:
    sc = generate_synthetic_city(2, seed=3, extra_diagonal_links=True, **kwargs)
    out = tmp_path / "city"
    write_scenario(sc, out)
    return sc, out


def test_load_round_trip_equals_original(tmp_path):
    sc, out = _write_city(tmp_path)
    loaded = load_scenario(out)
    assert loaded.city_id == sc.city_id
    assert loaded.region == sc.region
    assert loaded.zone_ids == sc.zone_ids
    assert loaded.zones == sc.zones
    assert loaded.network == sc.network
    assert loaded.od == sc.od
    assert loaded.schedule == sc.schedule
    assert loaded.geometry == sc.geometry
    assert loaded.flows == sc.flows
    assert loaded == sc


def test_two_by_two_with_diagonals_has_four_zones_twelve_links(tmp_path):
    sc, out = _write_city(tmp_path)
    loaded = load_scenario(out)
    assert len(loaded.zones) == 4
    assert len(loaded.network.links) == 12


def test_missing_periods_file_is_named(tmp_path):
    _, out = _write_city(tmp_path)
    (out / "periods.json").unlink()
    with pytest.raises(ScenarioError, match="missing scenario file: periods.json"):
        load_scenario(out)


def test_duplicate_zone_row_is_reported_with_row_number(tmp_path):
    _, out = _write_city(tmp_path)
    path = out / "zones.csv"
    lines = path.read_text().splitlines()
    lines.append(lines[1])  # repeat the first data row
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match=r"zones.csv row \d+: duplicate zone id"):
        load_scenario(out)


def test_od_row_with_unknown_zone_is_named(tmp_path):
    _, out = _write_city(tmp_path)
    od_files = sorted(out.glob("od_*.csv"))
    path = od_files[0]
    with open(path, "a") as fh:
        fh.write("Z99,Z0000,1.0\n")
    with pytest.raises(ScenarioError, match="unknown zone 'Z99'"):
        load_scenario(out)


def test_non_positive_link_length_is_rejected(tmp_path):
    _, out = _write_city(tmp_path)
    path = out / "links.csv"
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    idx = header.index("length")
    first = lines[1].split(",")
    first[idx] = "0.0"
    lines[1] = ",".join(first)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioError, match="non-positive length"):
        load_scenario(out)


def test_not_a_scenario_directory(tmp_path):
    with pytest.raises(ScenarioError, match="not a scenario directory"):
        load_scenario(tmp_path / "absent")


# ---------------------------------------------------------------------------
# Validation


def test_generated_city_validates_clean():
    sc = generate_synthetic_city(3, seed=5)
    report = validate_scenario(sc)
    assert report.ok, report.violations


def test_negative_od_mean_is_a_violation(grid4):
    od = dict(grid4.od)
    od["am"] = ODMatrix("am", {("A", "B"): -1.0})
    bad = Scenario(
        city_id=grid4.city_id,
        region=grid4.region,
        zones=grid4.zones,
        network=grid4.network,
        od=od,
        schedule=grid4.schedule,
        geometry=grid4.geometry,
        flows=None,
    )
    report = validate_scenario(bad)
    assert not report.ok
    assert any("od_am cell (A, B): negative mean" in v for v in report.violations)


def test_unreachable_zone_is_a_connectivity_violation(grid4):
    # Drop every link touching D's connector node.
    kept = tuple(
        ln for ln in grid4.network.links if "ND" not in (ln.from_node, ln.to_node)
    )
    net = Network(nodes=grid4.network.nodes, links=kept, zone_connector=grid4.network.zone_connector)
    bad = Scenario(
        city_id=grid4.city_id,
        region=grid4.region,
        zones=grid4.zones,
        network=net,
        od=grid4.od,
        schedule=grid4.schedule,
        geometry=grid4.geometry,
        flows=None,
    )
    report = validate_scenario(bad)
    assert any("not strongly connected" in v for v in report.violations)


def test_period_gaps_overlaps_and_equal_peaks_are_violations():
    gap = make_scenario(
        {"A": (0.0, 0.0), "B": (1.0, 0.0)},
        [("A", "B", 1.0, 5.0), ("B", "A", 1.0, 5.0)],
        {},
        schedule=PeriodSchedule(periods=(("am", 0, 700), ("pm", 720, 1440)), am_peak="am", pm_peak="pm"),
    )
    report = validate_scenario(gap)
    assert any("do not cover the full day" in v for v in report.violations)

    overlap = make_scenario(
        {"A": (0.0, 0.0), "B": (1.0, 0.0)},
        [("A", "B", 1.0, 5.0), ("B", "A", 1.0, 5.0)],
        {},
        schedule=PeriodSchedule(periods=(("am", 0, 800), ("pm", 700, 1440)), am_peak="am", pm_peak="pm"),
    )
    assert any("periods overlap" in v for v in validate_scenario(overlap).violations)

    same_peak = make_scenario(
        {"A": (0.0, 0.0), "B": (1.0, 0.0)},
        [("A", "B", 1.0, 5.0), ("B", "A", 1.0, 5.0)],
        {},
        schedule=PeriodSchedule(periods=(("am", 0, 720), ("pm", 720, 1440)), am_peak="am", pm_peak="am"),
    )
    assert any("am_peak equals pm_peak" in v for v in validate_scenario(same_peak).violations)


# ---------------------------------------------------------------------------
# Generator properties


def test_generator_is_deterministic_and_write_is_byte_stable(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    write_scenario(generate_synthetic_city(3, seed=9, streets_per_zone=2), a)
    write_scenario(generate_synthetic_city(3, seed=9, streets_per_zone=2), b)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_full_diversity_mix_splits_activity_into_equal_fifths():
    sc = generate_synthetic_city(2, diversity_mix=1.0, seed=1)
    for zone in sc.zones.values():
        for blk in zone.blocks:
            cats = (
                blk.housing_sf,
                blk.housing_mf,
                blk.job_reserve,
                blk.job_prof,
                blk.job_labor + blk.job_resource,
            )
            total = sum(cats)
            assert total > 0
            for c in cats:
                assert c == pytest.approx(total / 5.0, rel=1e-12)
            assert blk.job_office == 0.0 and blk.job_entertain == 0.0


def test_density_multiplier_scales_od_exactly():
    base = generate_synthetic_city(3, seed=4, density_multiplier=1.0)
    double = generate_synthetic_city(3, seed=4, density_multiplier=2.0)
    for pid in base.schedule.ids:
        e1 = base.od[pid].entries
        e2 = double.od[pid].entries
        assert set(e1) == set(e2)
        for cell, mean in e1.items():
            assert e2[cell] == pytest.approx(2.0 * mean, rel=1e-12)


def test_job_scale_multiplies_employment_only():
    base = generate_synthetic_city(2, seed=6, job_scale=1.0)
    scaled = generate_synthetic_city(2, seed=6, job_scale=2.0)
    for zid in base.zone_ids:
        for b1, b2 in zip(base.zones[zid].blocks, scaled.zones[zid].blocks):
            assert b2.population == b1.population
            assert b2.housing_sf == b1.housing_sf
            for f in JOB_SECTOR_FIELDS:
                assert getattr(b2, f) == pytest.approx(2.0 * getattr(b1, f), rel=1e-12)


def test_street_mesh_and_diagonals_add_links():
    sparse = generate_synthetic_city(3, seed=2, streets_per_zone=1, diagonal_fraction=0.0)
    dense = generate_synthetic_city(3, seed=2, streets_per_zone=2, diagonal_fraction=0.0)
    diag = generate_synthetic_city(3, seed=2, streets_per_zone=1, diagonal_fraction=1.0)
    assert len(dense.network.links) > len(sparse.network.links)
    assert len(diag.network.links) > len(sparse.network.links)


def test_generator_argument_errors():
    with pytest.raises(ScenarioError, match="n_zones_side"):
        generate_synthetic_city(0)
    with pytest.raises(ScenarioError, match="diversity_mix"):
        generate_synthetic_city(2, diversity_mix=1.5)
    with pytest.raises(ScenarioError, match="diagonal_fraction"):
        generate_synthetic_city(2, diagonal_fraction=-0.1)
    with pytest.raises(ScenarioError, match="streets_per_zone"):
        generate_synthetic_city(2, streets_per_zone=0)


# ---------------------------------------------------------------------------
# Config and schedule helpers


def test_config_validation_errors():
    with pytest.raises(ScenarioError, match="willingness_to_share"):
        SimConfig(willingness_to_share=1.2).validate()
    with pytest.raises(ScenarioError, match="market_penetration"):
        SimConfig(market_penetration=-0.1).validate()
    with pytest.raises(ScenarioError, match="max_wait_nonsharer"):
        SimConfig(max_wait_nonsharer=0).validate()
    with pytest.raises(ScenarioError, match="detour_cap"):
        SimConfig(detour_cap=-0.2).validate()
    with pytest.raises(ScenarioError, match="ticks"):
        SimConfig(tick_minutes=2).validate()
    with pytest.raises(ScenarioError, match="relocation_interval"):
        SimConfig(relocation_interval=0).validate()
    SimConfig().validate()  # defaults are valid


def test_schedule_minute_lookup(grid4):
    sched = grid4.schedule
    idx = sched.minute_to_index()
    assert idx.shape == (1440,)
    assert sched.ids[idx[0]] == "am"
    assert sched.ids[idx[719]] == "am"
    assert sched.ids[idx[720]] == "pm"
    assert sched.ids[idx[1439]] == "pm"
    assert sched.duration("am") == 720


def test_od_dense_matches_sparse_entries(grid4):
    mat = grid4.od_dense("am")
    zi = grid4.zone_index
    assert mat[zi["A"], zi["D"]] == 2.0
    assert mat[zi["B"], zi["C"]] == 1.0
    assert mat.sum() == 3.0
