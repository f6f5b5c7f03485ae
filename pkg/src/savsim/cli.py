"""Command-line interface for the fleet-simulation study pipeline.

Subcommands mirror the pipeline stages; `pipeline` chains all of them.
Errors print one machine-readable JSON object to stderr and exit nonzero.
The default output directory can be set with the SAVSIM_OUT environment
variable; flags always win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .demand import read_trips
from .engine import read_eventlog, write_simresult
from .geoalign import (
    GeoAlignError,
    align_boundary,
    geometry_from_scenario,
    intra_city_trip_share,
    select_cities,
)
from .metrics import (
    audit_detours,
    audit_waits,
    compute_performance,
    performance_row,
    replay_log,
    write_performance_csv,
)
from .router import build_skims
from .scenario import (
    Scenario,
    ScenarioError,
    SimConfig,
    generate_synthetic_city,
    load_scenario,
    validate_scenario,
    write_scenario,
)
from .stats import StatsError, write_coefficients_csv, write_regression_json
from .urbanform import UrbanFormError, build_urbanform_vector, urbanform_columns, write_urbanform_csv

_USER_ERRORS = (
    ScenarioError,
    StatsError,
    GeoAlignError,
    UrbanFormError,
    pl.PipelineError,
    FileNotFoundError,
    NotADirectoryError,
    json.JSONDecodeError,
    ValueError,
)


def _fail(exc: BaseException) -> int:
    sys.stderr.write(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True) + "\n"
    )
    return 1


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SAVSIM_OUT") or "savsim_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> SimConfig:
    cfg = SimConfig()
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        known = {f.name for f in dataclasses.fields(SimConfig)}
        unknown = set(data) - known
        if unknown:
            raise pl.PipelineError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **data)
    cfg.validate()
    return cfg


def _scenario_files(paths: list[str]) -> list[Path]:
    """Resolve scenario directories: a dir holding periods.json is a scenario;
    any other dir is scanned one level deep for scenario children."""
    dirs: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if not p.is_dir():
            raise FileNotFoundError(f"scenario directory not found: {p}")
        if (p / "periods.json").exists():
            dirs.append(p)
            continue
        inner = sorted(c for c in p.iterdir() if (c / "periods.json").exists())
        if not inner:
            raise pl.PipelineError(f"no scenario directories found under {p}")
        dirs.extend(inner)
    return dirs


def _load_scenarios(paths: list[str]) -> list[Scenario]:
    return [load_scenario(f) for f in _scenario_files(paths)]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


# ---------------------------------------------------------------------------
# Synthetic city families

def generate_family(
    n_cities: int,
    master_seed: int,
    n_zones_side: int = 4,
    base_od_rate: float = 60.0,
) -> list[Scenario]:
    """A deterministic spread of cities varying density, mix, and street
    design, laid out at distinct origins so spatial diagnostics are defined."""
    cities = []
    densities = (0.6, 0.85, 1.0, 1.25, 1.6)
    mixes = (0.2, 0.5, 0.8, 1.0, 0.35)
    streets = (1, 2, 3)
    diagonals = (0.0, 0.3, 0.6, 1.0)
    regions = ("west", "east")
    for i in range(n_cities):
        city_id = f"city{i:02d}"
        cities.append(
            generate_synthetic_city(
                n_zones_side,
                base_od_rate=base_od_rate,
                density_multiplier=densities[i % 5] * (1.0 + 0.05 * (i // 5)),
                diversity_mix=mixes[i % 5],
                seed=pl.derive_seed(master_seed, city_id, "gen"),
                city_id=city_id,
                region=regions[i % 2],
                origin_xy=(i * (n_zones_side + 60.0), 0.0),
                streets_per_zone=streets[i % 3],
                diagonal_fraction=diagonals[i % 4],
                job_scale=1.0 + 0.15 * (i % 4),
            )
        )
    return cities


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen(args) -> int:
    out = _out_dir(args)
    cities = generate_family(
        args.cities, args.seed, n_zones_side=args.zones, base_od_rate=args.od_rate
    )
    ids = []
    for sc in cities:
        write_scenario(sc, out / sc.city_id)
        ids.append(sc.city_id)
    (out / "manifest.json").write_text(
        json.dumps({"cities": ids, "seed": args.seed, "zones_per_side": args.zones},
                   indent=1, sort_keys=True) + "\n"
    )
    print(json.dumps({"generated": len(ids), "out": str(out)}, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    failures = []
    for f in _scenario_files(args.scenarios):
        sc = load_scenario(f)
        report = validate_scenario(sc)
        status = {"city_id": sc.city_id, "ok": report.ok, "errors": list(report.violations)}
        print(json.dumps(status, sort_keys=True))
        if not report.ok:
            failures.append(sc.city_id)
    if failures:
        raise pl.PipelineError(f"invalid scenarios: {failures}")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    config = _load_config(args)
    for f in _scenario_files(args.scenarios):
        sc = load_scenario(f)
        seed = pl.derive_seed(args.seed, sc.city_id, "batch")
        perf, result = pl.simulate_city(sc, config, seed)
        sim_dir = out / f"sim_{sc.city_id}"
        write_simresult(result, sim_dir)
        write_performance_csv([performance_row(sc.city_id, perf)], sim_dir / "performance.csv")
        print(json.dumps(
            {"city_id": sc.city_id, "fleet_size": result.fleet_size,
             "served": result.counts["served"], "out": str(sim_dir)},
            sort_keys=True,
        ))
    return 0


def cmd_metrics(args) -> int:
    out = _out_dir(args)
    sc = load_scenario(args.scenario)
    sim_dir = Path(args.sim)
    events = read_eventlog(sim_dir / "eventlog.jsonl")
    trips = read_trips(sim_dir / "trips_out.csv")
    summary = json.loads((sim_dir / "simresult.json").read_text())
    config = SimConfig(**summary["config"])
    skims = build_skims(sc.network, sc.schedule)

    from .engine import SimulationResult

    result = SimulationResult(
        fleet_size=summary["fleet_size"], seed=summary["seed"], config=config,
        trips=trips, events=events, vehicles=summary["vehicles"], counts=summary["counts"],
    )
    perf = compute_performance(result)
    write_performance_csv([performance_row(sc.city_id, perf)], out / "performance.csv")

    replay = replay_log(events, trips, sc, config, skims)
    violations = list(replay.violations)
    violations += audit_detours(replay, trips, config.detour_cap)
    violations += audit_waits(trips, config)
    (out / "audit.json").write_text(
        json.dumps({"ok": not violations, "violations": violations}, indent=1, sort_keys=True)
        + "\n"
    )
    print(json.dumps({"ok": not violations, "violations": len(violations)}, sort_keys=True))
    return 0 if not violations else 1


def cmd_urbanform(args) -> int:
    out = _out_dir(args)
    vectors = [build_urbanform_vector(sc) for sc in _load_scenarios(args.scenarios)]
    vectors.sort(key=lambda v: v.city_id)
    write_urbanform_csv(vectors, out / "urbanform.csv")
    print(json.dumps({"cities": len(vectors), "out": str(out / "urbanform.csv")}, sort_keys=True))
    return 0


def cmd_align(args) -> int:
    out = _out_dir(args)
    rows = []
    shares = []
    for sc in sorted(_load_scenarios(args.scenarios), key=lambda s: s.city_id):
        geom = geometry_from_scenario(sc)
        alignment = align_boundary(geom, args.overlap)
        share = intra_city_trip_share(sc, alignment.selected_zones)
        shares.append((sc.city_id, alignment, share))
        rows.append(
            {
                "city_id": sc.city_id,
                "selected_zones": len(alignment.selected_zones),
                "coverage_ratio": alignment.coverage_ratio,
                "spill_ratio": alignment.spill_ratio,
                "intra_share": share,
            }
        )
    selections = select_cities(shares, share_threshold=args.share_threshold,
                               min_zones=args.min_zones)
    by_city = {s.city_id: s for s in selections}
    with open(out / "alignment.csv", "w", newline="") as fh:
        fh.write("city_id,selected_zones,coverage_ratio,spill_ratio,intra_share,accepted,reasons\n")
        for r in rows:
            s = by_city[r["city_id"]]
            fh.write(
                f"{r['city_id']},{r['selected_zones']},{repr(float(r['coverage_ratio']))},"
                f"{repr(float(r['spill_ratio']))},{repr(float(r['intra_share']))},{s.accepted},"
                f"{';'.join(s.reasons)}\n"
            )
    accepted = sum(1 for s in selections if s.accepted)
    print(json.dumps({"cities": len(rows), "accepted": accepted}, sort_keys=True))
    return 0


def _write_fits(outcomes, out: Path) -> None:
    results = [o.result for o in outcomes if o.result is not None]
    for o in outcomes:
        if o.result is not None:
            write_regression_json(o.result, out / f"regression_{o.response}.json")
        else:
            (out / f"regression_{o.response}.json").write_text(
                json.dumps({"dependent": o.column, "error": o.error, "flags": o.flags},
                           indent=1, sort_keys=True) + "\n"
            )
    write_coefficients_csv(results, out / "coefficients.csv")
    pl.write_morans_csv(outcomes, out / "morans.csv")


def _candidate_list(args) -> tuple[str, ...]:
    if not getattr(args, "candidates", None):
        return pl.DEFAULT_CANDIDATES
    if args.candidates == "all":
        return tuple(urbanform_columns())
    return tuple(v for v in args.candidates.split(",") if v)


def cmd_regress(args) -> int:
    out = _out_dir(args)
    batch = pl.read_batch_csv(args.batch)
    outcomes = pl.fit_city_models(
        batch, candidates=_candidate_list(args), alpha=args.alpha,
        r_max=args.r_max, vif_max=args.vif_max,
        morans_permutations=args.permutations, seed=args.seed,
    )
    _write_fits(outcomes, out)
    fitted = [o.response for o in outcomes if o.result is not None]
    print(json.dumps({"fitted": fitted, "out": str(out)}, sort_keys=True))
    return 0 if fitted else 1


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    config = _load_config(args)
    scenarios = _load_scenarios(args.scenarios)
    spec = pl.SweepSpec(
        ws_values=_floats(args.ws), mp_values=_floats(args.mp),
        replicates=args.replicates,
    ).normalized()
    outputs = pl.run_sweep(
        scenarios, config, spec, args.seed, jobs=args.jobs,
        candidates=_candidate_list(args),
    )
    for label, table in sorted(outputs.cell_tables.items()):
        cell_dir = out / f"cell_{label}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        pl.write_batch_csv(table, cell_dir / "batch.csv")
    base_dir = out / "baseline"
    base_dir.mkdir(parents=True, exist_ok=True)
    _write_fits(outputs.baseline_fits, base_dir)
    pl.write_frame_csv(outputs.coefficients, out / "sweep_coefficients.csv")
    pl.write_frame_csv(outputs.ttests, out / "sweep_ttests.csv")
    print(json.dumps(
        {"cells": len(outputs.cell_tables), "ttests": len(outputs.ttests), "out": str(out)},
        sort_keys=True,
    ))
    return 0


def cmd_thresholds(args) -> int:
    out = _out_dir(args)
    config = _load_config(args)
    scenarios = _load_scenarios(args.scenarios)
    outputs = pl.run_threshold_study(
        scenarios, config, _floats(args.thresholds), args.seed,
        jobs=args.jobs, candidates=_candidate_list(args), min_zones=args.min_zones,
    )
    pl.write_frame_csv(outputs.selections, out / "threshold_selection.csv")
    pl.write_frame_csv(outputs.summary, out / "threshold_summary.csv")
    pl.write_frame_csv(outputs.coefficients, out / "threshold_coefficients.csv")
    print(json.dumps({"thresholds": outputs.summary["threshold"].nunique(),
                      "out": str(out)}, sort_keys=True, default=int))
    return 0


def cmd_pipeline(args) -> int:
    out = _out_dir(args)
    config = _load_config(args)
    if args.scenarios:
        scenarios = _load_scenarios(args.scenarios)
    else:
        scenarios = generate_family(args.cities, args.seed, n_zones_side=args.zones,
                                    base_od_rate=args.od_rate)
        cities_dir = out / "cities"
        for sc in scenarios:
            write_scenario(sc, cities_dir / sc.city_id)

    batch = pl.run_batch(scenarios, config, args.seed, jobs=args.jobs)
    pl.write_batch_csv(batch, out / "batch.csv")

    reg_dir = out / "regression"
    reg_dir.mkdir(parents=True, exist_ok=True)
    outcomes = pl.fit_city_models(batch, candidates=_candidate_list(args))
    _write_fits(outcomes, reg_dir)

    sweep_dir = out / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    spec = pl.SweepSpec(
        ws_values=_floats(args.ws), mp_values=_floats(args.mp), replicates=args.replicates
    ).normalized()
    sweep_out = pl.run_sweep(scenarios, config, spec, args.seed, jobs=args.jobs,
                             candidates=_candidate_list(args))
    for label, table in sorted(sweep_out.cell_tables.items()):
        cell_dir = sweep_dir / f"cell_{label}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        pl.write_batch_csv(table, cell_dir / "batch.csv")
    _write_fits(sweep_out.baseline_fits, sweep_dir)
    pl.write_frame_csv(sweep_out.coefficients, sweep_dir / "sweep_coefficients.csv")
    pl.write_frame_csv(sweep_out.ttests, sweep_dir / "sweep_ttests.csv")

    th_dir = out / "thresholds"
    th_dir.mkdir(parents=True, exist_ok=True)
    th_out = pl.run_threshold_study(
        scenarios, config, _floats(args.thresholds), args.seed, jobs=args.jobs,
        candidates=_candidate_list(args), min_zones=args.min_zones, batch=batch,
    )
    pl.write_frame_csv(th_out.selections, th_dir / "threshold_selection.csv")
    pl.write_frame_csv(th_out.summary, th_dir / "threshold_summary.csv")
    pl.write_frame_csv(th_out.coefficients, th_dir / "threshold_coefficients.csv")

    manifest = {
        "seed": args.seed,
        "cities": sorted(sc.city_id for sc in scenarios),
        "stages": {
            "batch": "batch.csv",
            "regression": "regression/",
            "sweep": "sweep/",
            "thresholds": "thresholds/",
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out), "cities": len(scenarios)}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=None, help="output directory (default $SAVSIM_OUT or ./savsim_out)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (results are byte-identical regardless)")
    p.add_argument("--config", default=None, help="JSON file overriding simulation config fields")


def _add_candidates(p: argparse.ArgumentParser) -> None:
    p.add_argument("--candidates", default=None,
                   help="comma-separated regressor names, or 'all' (default: curated core set)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--r-max", type=float, default=0.75)
    p.add_argument("--vif-max", type=float, default=5.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="savsim",
        description="Deterministic shared-fleet simulation and cross-city analysis pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a family of synthetic cities")
    p.add_argument("--cities", type=int, default=5)
    p.add_argument("--zones", type=int, default=4, help="zones per side of the square grid")
    p.add_argument("--od-rate", type=float, default=60.0, help="base daily trips per OD cell")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="validate scenario files")
    p.add_argument("scenarios", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run the two-day simulation per city")
    p.add_argument("scenarios", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="recompute metrics and audit a serialized run")
    p.add_argument("--scenario", required=True)
    p.add_argument("--sim", required=True, help="directory written by `simulate`")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("urbanform", help="measure urban form per city")
    p.add_argument("scenarios", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_urbanform)

    p = sub.add_parser("align", help="boundary alignment and city selection")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--overlap", type=float, default=0.5, help="zone area-overlap threshold")
    p.add_argument("--share-threshold", type=float, default=0.20)
    p.add_argument("--min-zones", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("regress", help="fit response models from a batch table")
    p.add_argument("--batch", required=True, help="batch.csv produced by `pipeline` or `sweep`")
    p.add_argument("--permutations", type=int, default=0,
                   help="permutation count for the spatial diagnostic p-value")
    _add_candidates(p)
    _add_common(p)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("sweep", help="sensitivity sweep over sharing/penetration cells")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--ws", default="0.10,0.20,0.275,0.30,0.40,0.50")
    p.add_argument("--mp", default="0.25,0.50,0.75,1.00")
    p.add_argument("--replicates", type=int, default=1)
    _add_candidates(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("thresholds", help="intra-share threshold sensitivity study")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--thresholds", default="0.20,0.25,0.30,0.35,0.40,0.45")
    p.add_argument("--min-zones", type=int, default=10)
    _add_candidates(p)
    _add_common(p)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--scenarios", nargs="*", default=None,
                   help="existing scenario files/dirs (default: generate synthetic cities)")
    p.add_argument("--cities", type=int, default=5)
    p.add_argument("--zones", type=int, default=4)
    p.add_argument("--od-rate", type=float, default=60.0)
    p.add_argument("--ws", default="0.10,0.275,0.50")
    p.add_argument("--mp", default="1.0")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--thresholds", default="0.20,0.25,0.30,0.35,0.40,0.45")
    p.add_argument("--min-zones", type=int, default=10)
    _add_candidates(p)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
