"""Study orchestration: batch city runs, sensitivity sweeps, threshold studies.

Every stage is deterministic under a fixed master seed: per-city, per-cell
sub-seeds come from a documented splitting rule (SHA-256 of master seed,
city id, and cell label — see seeding.derive_seed), work units are pure,
results are assembled in sorted order regardless of worker count, and all
writers emit repr-formatted floats so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats as sps

from .demand import default_departure_histogram
from .engine import SimulationResult, run_simulation
from .geoalign import align_boundary, geometry_from_scenario, intra_city_trip_share, select_cities
from .metrics import PerformanceMetrics, compute_performance
from .router import build_skims
from .scenario import Scenario, SimConfig, validate_scenario
from .seeding import derive_seed
from .stats import (
    RegressionResult,
    StatsError,
    coeff_ttest,
    morans_i,
    refit,
    stepwise_select,
    transform_variables,
)
from .urbanform import build_urbanform_vector, urbanform_columns

BASELINE_WS = 0.275
BASELINE_MP = 1.0

#: The three system-performance responses modelled per experiment cell.
RESPONSES = ("trips_per_sav", "pct_pooled", "pct_extra_vmt")

#: Performance fields carried into the joined batch table.
PERF_FIELDS = (
    "fleet_size",
    "generated",
    "served",
    "abandoned",
    "still_waiting",
    "willing",
    "pooled",
    "vmt_empty",
    "vmt_occupied",
    "vmt_total",
    "demanded_miles",
    "trips_per_sav",
    "pct_pooled",
    "pct_extra_vmt",
    "mean_wait_served",
)

#: Default regressor pool: density, diversity, and design measures. The full
#: accessibility grid is available via candidates=urbanform_columns().
DEFAULT_CANDIDATES = (
    "popDen",
    "hhDen",
    "hsDen",
    "workerDen",
    "jobDen",
    "jobService5Med",
    "jobOffice5Med",
    "jobIndust5Med",
    "jobEntertain5Med",
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
)


class PipelineError(Exception):
    pass


# ---------------------------------------------------------------------------
# Sweep specification

@dataclass(frozen=True)
class SweepSpec:
    """Experiment grid for the sensitivity analyses.

    The baseline cell (sharing propensity 0.275, full market penetration) is
    always part of the grid; `normalized` inserts it if missing.
    """

    ws_values: tuple[float, ...] = (0.10, 0.20, 0.275, 0.30, 0.40, 0.50)
    mp_values: tuple[float, ...] = (0.25, 0.50, 0.75, 1.00)
    share_thresholds: tuple[float, ...] = (0.20, 0.25, 0.30, 0.35, 0.40, 0.45)
    replicates: int = 1

    def normalized(self) -> "SweepSpec":
        ws = sorted(set(self.ws_values) | {BASELINE_WS})
        mp = sorted(set(self.mp_values) | {BASELINE_MP})
        th = sorted(set(self.share_thresholds))
        for v in ws:
            if not 0.0 <= v <= 1.0:
                raise PipelineError(f"sharing propensity {v} outside [0, 1]")
        for v in mp:
            if not 0.0 < v <= 1.0:
                raise PipelineError(f"market penetration {v} outside (0, 1]")
        for v in th:
            if not 0.0 <= v <= 1.0:
                raise PipelineError(f"share threshold {v} outside [0, 1]")
        if self.replicates < 1:
            raise PipelineError("replicates must be >= 1")
        return SweepSpec(tuple(ws), tuple(mp), tuple(th), self.replicates)

    def cells(self) -> list[tuple[float, float]]:
        return [(ws, mp) for ws in self.ws_values for mp in self.mp_values]


def cell_label(ws: float, mp: float) -> str:
    return f"ws{ws:g}_mp{mp:g}"


# ---------------------------------------------------------------------------
# Batch stage

BATCH_COLUMNS = (
    ("city_id", "region", "replicate", "cx", "cy")
    + PERF_FIELDS
    + tuple(urbanform_columns())
    + ("perf_flags", "uf_flags", "error")
)


def city_centroid(scenario: Scenario) -> tuple[float, float]:
    xs = [z.cx for z in scenario.zones.values()]
    ys = [z.cy for z in scenario.zones.values()]
    return float(np.mean(xs)), float(np.mean(ys))


def simulate_city(
    scenario: Scenario, config: SimConfig, seed: int
) -> tuple[PerformanceMetrics, SimulationResult]:
    report = validate_scenario(scenario)
    if not report.ok:
        raise PipelineError(f"invalid scenario {scenario.city_id}: {report.violations[0]}")
    skims = build_skims(scenario.network, scenario.schedule)
    result = run_simulation(scenario, skims, config, seed, default_departure_histogram())
    return compute_performance(result), result


def _batch_worker(args) -> dict:
    scenario, config, seed, replicate = args
    cx, cy = city_centroid(scenario)
    row: dict = {c: None for c in BATCH_COLUMNS}
    row.update(
        city_id=scenario.city_id,
        region=scenario.region,
        replicate=replicate,
        cx=cx,
        cy=cy,
        perf_flags="",
        uf_flags="",
        error="",
    )
    try:
        uf = build_urbanform_vector(scenario)
        for col in urbanform_columns():
            row[col] = uf.values.get(col)
        row["uf_flags"] = ";".join(uf.flags)
        perf, _ = simulate_city(scenario, config, seed)
        for f in PERF_FIELDS:
            row[f] = getattr(perf, f)
        row["perf_flags"] = ";".join(perf.flags)
    except Exception as exc:  # per-city isolation: failures become a row
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_jobs(worker, work_items: list, jobs: int) -> list:
    if jobs <= 1 or len(work_items) <= 1:
        return [worker(item) for item in work_items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(worker, work_items))


def run_batch(
    scenarios: list[Scenario],
    config: SimConfig,
    master_seed: int,
    label: str = "batch",
    jobs: int = 1,
    replicates: int = 1,
) -> pd.DataFrame:
    """One joined performance + urban-form row per (city, replicate).

    Failures never abort the batch: a failing city contributes a row whose
    `error` column carries the exception. Output order is (city_id,
    replicate) regardless of `jobs`.
    """
    items = []
    for scenario in sorted(scenarios, key=lambda s: s.city_id):
        for rep in range(replicates):
            labels = [scenario.city_id, label] + ([f"rep{rep}"] if replicates > 1 else [])
            seed = derive_seed(master_seed, *labels)
            items.append((scenario, config, seed, rep))
    rows = _run_jobs(_batch_worker, items, jobs)
    return pd.DataFrame(rows, columns=list(BATCH_COLUMNS))


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(float(value))
    if isinstance(value, np.floating):
        return "" if math.isnan(float(value)) else repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_batch_csv(table: pd.DataFrame, path: str | Path) -> None:
    # csv.writer quotes cells holding commas (e.g. captured error messages).
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BATCH_COLUMNS)
        for _, row in table.iterrows():
            writer.writerow([_csv_cell(row[c]) for c in BATCH_COLUMNS])


def read_batch_csv(path: str | Path) -> pd.DataFrame:
    table = pd.read_csv(
        path,
        dtype={"city_id": str, "region": str},
        keep_default_na=False,
        float_precision="round_trip",  # cells are repr()s; parse them back exactly
    )
    for col in table.columns:
        if col in ("city_id", "region", "perf_flags", "uf_flags", "error"):
            continue
        if table[col].dtype == object:
            # Mixed ""/number columns: Python float() keeps repr() exactness
            # (pandas' to_numeric string parser can be off by one ulp).
            table[col] = np.array(
                [_exact_float(v) for v in table[col]], dtype=float
            )
        else:
            table[col] = pd.to_numeric(table[col], errors="coerce")
    return table


def _exact_float(value) -> float:
    if isinstance(value, str):
        if value == "":
            return math.nan
        try:
            return float(value)
        except ValueError:
            return math.nan
    return float(value)


# ---------------------------------------------------------------------------
# Regression stage

@dataclass
class FitOutcome:
    response: str  # requested metric name
    column: str  # actual modelled column (Log-suffixed when transformed)
    result: RegressionResult | None
    error: str | None = None
    flags: list[str] = field(default_factory=list)


def regression_table(batch: pd.DataFrame) -> pd.DataFrame:
    """Per-city analysis rows: failures dropped, replicates averaged."""
    ok = batch.copy()
    if "error" in ok.columns:
        ok = ok[ok["error"].astype(str) == ""].copy()
    numeric = [
        c
        for c in ok.columns
        if c not in ("city_id", "region", "perf_flags", "uf_flags", "error", "replicate")
    ]
    for c in numeric:
        ok[c] = pd.to_numeric(ok[c], errors="coerce")
    if "replicate" in ok.columns and len(ok):
        grouped = ok.groupby("city_id", sort=True)
        agg = grouped[numeric].mean().assign(region=grouped["region"].first())
        ok = agg.reset_index()
    return ok


def _prepare_response(table: pd.DataFrame, response: str) -> tuple[pd.DataFrame, str, list[str]]:
    flags: list[str] = []
    sub = table[table[response].notna()].copy()
    dropped = len(table) - len(sub)
    if dropped:
        flags.append(f"dropped {dropped} cities with undefined {response}")
    col = response
    if response == "pct_extra_vmt" and len(sub):
        vals = sub[response].to_numpy(dtype=float)
        if vals.min() > 0:
            col = response + "Log"
            sub[col] = np.log(vals)
        else:
            flags.append("pct_extra_vmt not strictly positive; modelled untransformed")
    return sub, col, flags


def fit_city_models(
    batch: pd.DataFrame,
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
    responses: tuple[str, ...] = RESPONSES,
    r_max: float = 0.75,
    vif_max: float = 5.0,
    alpha: float = 0.05,
    morans_permutations: int = 0,
    seed: int = 0,
) -> list[FitOutcome]:
    """Transform regressors, run stepwise selection per response, attach the
    spatial autocorrelation diagnostic on residuals."""
    table = regression_table(batch)
    present = [c for c in candidates if c in table.columns]
    transformed = transform_variables(table, present)
    table = transformed.table
    cand = tuple(transformed.logged.get(c, c) for c in present)

    outcomes: list[FitOutcome] = []
    for response in responses:
        sub, col, flags = _prepare_response(table, response)
        flags.extend(f"log-guard:{c}" for c in transformed.flagged)
        try:
            result = stepwise_select(
                sub, col, list(cand), region_col="region",
                r_max=r_max, vif_max=vif_max, alpha=alpha,
            )
        except StatsError as exc:
            outcomes.append(FitOutcome(response, col, None, error=str(exc), flags=flags))
            continue
        try:
            mor = morans_i(
                np.asarray(result.residuals),
                sub[["cx", "cy"]].to_numpy(dtype=float),
                permutations=morans_permutations,
                seed=seed,
            )
            result.morans_i = mor.i
            result.morans_p = mor.p_normal
        except StatsError as exc:
            flags.append(f"morans:{exc}")
        result.flags.extend(flags)
        outcomes.append(FitOutcome(response, col, result, flags=flags))
    return outcomes


def write_morans_csv(outcomes: list[FitOutcome], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("dependent,morans_i,p\n")
        for o in outcomes:
            if o.result is None:
                fh.write(f"{o.column},,\n")
                continue
            i = "" if o.result.morans_i is None else repr(o.result.morans_i)
            p = "" if o.result.morans_p is None else repr(o.result.morans_p)
            fh.write(f"{o.column},{i},{p}\n")


# ---------------------------------------------------------------------------
# Prediction helpers (threshold study)

def predict(result: RegressionResult, table: pd.DataFrame, region_col: str = "region") -> np.ndarray:
    """Apply a fitted model to new rows (dummies resolved by region level)."""
    n = len(table)
    yhat = np.full(n, result.coef["const"], dtype=float)
    for dummy in result.forced:
        level = dummy[len("region_"):]
        yhat += result.coef[dummy] * (table[region_col] == level).to_numpy(dtype=float)
    for var in result.selected:
        yhat += result.coef[var] * table[var].to_numpy(dtype=float)
    return yhat


# ---------------------------------------------------------------------------
# Sweep stage

@dataclass
class SweepOutputs:
    cell_tables: dict[str, pd.DataFrame]
    baseline_fits: list[FitOutcome]
    coefficients: pd.DataFrame  # ws, mp, dependent, variable, estimate, se, t, p, vif
    ttests: pd.DataFrame  # dependent, variable, ws, mp, stat, p


def _cell_fit_rows(ws, mp, outcome: FitOutcome, result: RegressionResult) -> list[dict]:
    rows = []
    for name in result.names:
        rows.append(
            {
                "ws": ws,
                "mp": mp,
                "dependent": outcome.column,
                "variable": name,
                "estimate": result.coef[name],
                "se": result.se[name],
                "t": result.t[name],
                "p": result.p[name],
                "vif": result.vif.get(name),
            }
        )
    return rows


def run_sweep(
    scenarios: list[Scenario],
    config: SimConfig,
    sweep: SweepSpec,
    master_seed: int,
    jobs: int = 1,
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
    responses: tuple[str, ...] = RESPONSES,
) -> SweepOutputs:
    """Simulate every (sharing propensity, market penetration) cell, fit the
    response models, and compare each cell's coefficients to the baseline.

    Variable selection runs once, on the baseline cell; every other cell
    refits the baseline's selected variables so coefficient comparisons are
    like-for-like. Comparison rows use a two-sided normal test on the
    estimate pairs; the baseline-only grid yields an empty comparison table.
    """
    sweep = sweep.normalized()
    cell_tables: dict[str, pd.DataFrame] = {}
    for ws, mp in sweep.cells():
        label = cell_label(ws, mp)
        cell_cfg = replace(config, willingness_to_share=ws, market_penetration=mp)
        cell_tables[label] = run_batch(
            scenarios, cell_cfg, master_seed, label=label, jobs=jobs,
            replicates=sweep.replicates,
        )

    base_label = cell_label(BASELINE_WS, BASELINE_MP)
    baseline_fits = fit_city_models(cell_tables[base_label], candidates, responses)

    coeff_rows: list[dict] = []
    ttest_rows: list[dict] = []
    for ws, mp in sweep.cells():
        label = cell_label(ws, mp)
        table = regression_table(cell_tables[label])
        for outcome in baseline_fits:
            if outcome.result is None:
                continue
            if label == base_label:
                coeff_rows.extend(_cell_fit_rows(ws, mp, outcome, outcome.result))
                continue
            sub, col, _ = _prepare_response(
                _apply_transforms(table, outcome), outcome.response
            )
            if col != outcome.column:
                ttest_rows.append(
                    {
                        "dependent": outcome.column,
                        "variable": "",
                        "ws": ws,
                        "mp": mp,
                        "stat": None,
                        "p": None,
                        "note": f"response transform mismatch in {label}",
                    }
                )
                continue
            try:
                cell_fit = refit(sub, col, outcome.result.selected, region_col="region")
            except StatsError as exc:
                ttest_rows.append(
                    {
                        "dependent": outcome.column,
                        "variable": "",
                        "ws": ws,
                        "mp": mp,
                        "stat": None,
                        "p": None,
                        "note": f"refit failed in {label}: {exc}",
                    }
                )
                continue
            coeff_rows.extend(_cell_fit_rows(ws, mp, outcome, cell_fit))
            base = outcome.result
            for var in base.selected:
                stat, p = coeff_ttest(
                    cell_fit.coef[var], cell_fit.se[var], base.coef[var], base.se[var]
                )
                ttest_rows.append(
                    {
                        "dependent": outcome.column,
                        "variable": var,
                        "ws": ws,
                        "mp": mp,
                        "stat": stat,
                        "p": p,
                        "note": "",
                    }
                )

    coefficients = pd.DataFrame(
        coeff_rows, columns=["ws", "mp", "dependent", "variable", "estimate", "se", "t", "p", "vif"]
    )
    ttests = pd.DataFrame(
        ttest_rows, columns=["dependent", "variable", "ws", "mp", "stat", "p", "note"]
    )
    return SweepOutputs(cell_tables, baseline_fits, coefficients, ttests)


def _apply_transforms(table: pd.DataFrame, outcome: FitOutcome) -> pd.DataFrame:
    """Recreate the baseline's predictor transforms on another cell's table.

    Urban form does not vary across cells, so a Log-suffixed selected
    variable is reproduced by logging the original column.
    """
    out = table.copy()
    for var in outcome.result.selected if outcome.result else []:
        if var.endswith("Log") and var not in out.columns:
            orig = var[:-3]
            if orig in out.columns:
                out[var] = np.log(out[orig].to_numpy(dtype=float))
    return out


def write_frame_csv(frame: pd.DataFrame, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(frame.columns)
        for _, row in frame.iterrows():
            writer.writerow([_csv_cell(row[c]) for c in frame.columns])


# ---------------------------------------------------------------------------
# Threshold study

@dataclass
class ThresholdOutputs:
    selections: pd.DataFrame  # threshold, city_id, n_zones, share, accepted, reasons
    summary: pd.DataFrame  # threshold, dependent, n_cities, rmse, skipped, reason
    coefficients: pd.DataFrame  # threshold, dependent, variable, estimate, se, p, ci_low, ci_high


def run_threshold_study(
    scenarios: list[Scenario],
    config: SimConfig,
    thresholds: tuple[float, ...],
    master_seed: int,
    jobs: int = 1,
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
    responses: tuple[str, ...] = RESPONSES,
    min_zones: int = 10,
    overlap_threshold: float = 0.5,
    batch: pd.DataFrame | None = None,
) -> ThresholdOutputs:
    """City-selection sensitivity: sweep the intra-boundary trip-share cutoff.

    The lowest threshold is the reference: variable selection runs on its
    city subset, stricter thresholds refit the same variables on their
    subsets, and each row reports the reference model's RMSE on the subset
    plus refit coefficients with 95% confidence intervals. Subsets too small
    to fit are reported and skipped.
    """
    thresholds = tuple(sorted(set(thresholds)))
    if not thresholds:
        raise PipelineError("no share thresholds supplied")
    if batch is None:
        batch = run_batch(scenarios, config, master_seed, label="thresholds", jobs=jobs)
    fit_table = regression_table(batch)

    shares: list[tuple[str, object, float]] = []
    for scenario in sorted(scenarios, key=lambda s: s.city_id):
        geom = geometry_from_scenario(scenario)
        alignment = align_boundary(geom, overlap_threshold)
        share = intra_city_trip_share(scenario, alignment.selected_zones)
        shares.append((scenario.city_id, alignment, share))

    sel_rows: list[dict] = []
    subsets: dict[float, list[str]] = {}
    for th in thresholds:
        selections = select_cities(shares, share_threshold=th, min_zones=min_zones)
        accepted = [s.city_id for s in selections if s.accepted]
        subsets[th] = accepted
        for s in selections:
            sel_rows.append(
                {
                    "threshold": th,
                    "city_id": s.city_id,
                    "n_zones": s.n_zones,
                    "share": s.share,
                    "accepted": s.accepted,
                    "reasons": ";".join(s.reasons),
                }
            )

    ref_th = thresholds[0]
    ref_table = fit_table[fit_table["city_id"].isin(subsets[ref_th])]
    ref_fits = {
        o.response: o for o in fit_city_models(ref_table, candidates, responses)
    }

    summary_rows: list[dict] = []
    coeff_rows: list[dict] = []
    for th in thresholds:
        cities = subsets[th]
        sub_all = fit_table[fit_table["city_id"].isin(cities)]
        for response in responses:
            ref = ref_fits[response]
            row = {
                "threshold": th,
                "dependent": ref.column,
                "n_cities": len(cities),
                "rmse": None,
                "skipped": False,
                "reason": "",
            }
            if ref.result is None:
                row.update(skipped=True, reason=f"reference fit failed: {ref.error}")
                summary_rows.append(row)
                continue
            sub, col, _ = _prepare_response(_apply_transforms(sub_all, ref), response)
            n = len(sub)
            p = 1 + len(ref.result.forced) + len(ref.result.selected)
            if n <= p:
                row.update(skipped=True, reason=f"subset too small (n={n} <= p={p})")
                summary_rows.append(row)
                continue
            if col != ref.column:
                row.update(skipped=True, reason="response transform mismatch")
                summary_rows.append(row)
                continue
            y = sub[col].to_numpy(dtype=float)
            resid = y - predict(ref.result, sub)
            row["rmse"] = float(np.sqrt(np.mean(resid**2)))
            try:
                cell_fit = refit(sub, col, ref.result.selected, region_col="region")
            except StatsError as exc:
                row.update(skipped=True, reason=f"refit failed: {exc}")
                summary_rows.append(row)
                continue
            summary_rows.append(row)
            tcrit = float(sps.t.ppf(0.975, n - len(cell_fit.names)))
            for name in cell_fit.names:
                est, se = cell_fit.coef[name], cell_fit.se[name]
                coeff_rows.append(
                    {
                        "threshold": th,
                        "dependent": ref.column,
                        "variable": name,
                        "estimate": est,
                        "se": se,
                        "p": cell_fit.p[name],
                        "ci_low": est - tcrit * se,
                        "ci_high": est + tcrit * se,
                    }
                )

    return ThresholdOutputs(
        selections=pd.DataFrame(
            sel_rows, columns=["threshold", "city_id", "n_zones", "share", "accepted", "reasons"]
        ),
        summary=pd.DataFrame(
            summary_rows,
            columns=["threshold", "dependent", "n_cities", "rmse", "skipped", "reason"],
        ),
        coefficients=pd.DataFrame(
            coeff_rows,
            columns=[
                "threshold", "dependent", "variable", "estimate", "se", "p", "ci_low", "ci_high",
            ],
        ),
    )
