"""Regression machinery for the cross-city analysis.

Covers the whole estimation path: excess-kurtosis screening with guarded log
transforms, ordinary least squares with classical inference, variance
inflation factors, a customized forward stepwise selector with forced
region dummies, a spatial autocorrelation diagnostic on residuals
(inverse-distance Moran's I), and a two-sample test for comparing a
coefficient across separately fitted models.

Everything is deterministic; any randomness (permutation p-values) is
seeded explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats as sps


class StatsError(Exception):
    pass


# ---------------------------------------------------------------------------
# Moments and transforms

def kurtosis(x, excess: bool = True) -> float:
    """Moment kurtosis m4/m2^2 (excess subtracts the normal baseline 3)."""
    arr = np.asarray(x, dtype=float)
    if arr.size < 4:
        raise StatsError("kurtosis needs at least 4 observations")
    centered = arr - arr.mean()
    m2 = float((centered**2).mean())
    if m2 <= 0:
        raise StatsError("kurtosis undefined for a constant sample")
    m4 = float((centered**4).mean())
    g = m4 / (m2 * m2)
    return g - 3.0 if excess else g


@dataclass
class TransformResult:
    table: pd.DataFrame
    logged: dict[str, str]  # original name -> new (Log-suffixed) name
    flagged: list[str]  # heavy-tailed but not strictly positive


def transform_variables(
    table: pd.DataFrame, columns: list[str], kurtosis_max: float = 3.0
) -> TransformResult:
    """Replace heavy-tailed strictly positive columns with their natural log.

    A column qualifies when |excess kurtosis| > kurtosis_max and its minimum
    is strictly positive; it is then renamed with a Log suffix. Heavy-tailed
    columns that touch zero or go negative are left as-is and flagged.
    """
    out = table.copy()
    logged: dict[str, str] = {}
    flagged: list[str] = []
    for col in columns:
        vals = out[col].to_numpy(dtype=float)
        try:
            k = kurtosis(vals)
        except StatsError:
            continue
        if abs(k) <= kurtosis_max:
            continue
        if vals.min() <= 0:
            flagged.append(col)
            continue
        new = col + "Log"
        out[new] = np.log(vals)
        out = out.drop(columns=[col])
        logged[col] = new
    return TransformResult(table=out, logged=logged, flagged=flagged)


# ---------------------------------------------------------------------------
# OLS

@dataclass
class OLSFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    adj_r2: float
    residuals: np.ndarray
    fitted: np.ndarray
    n: int
    df_resid: int

    def by_name(self) -> dict[str, dict[str, float]]:
        return {
            name: {
                "coef": float(self.coef[i]),
                "se": float(self.se[i]),
                "t": float(self.t[i]),
                "p": float(self.p[i]),
            }
            for i, name in enumerate(self.names)
        }


def _name_dependent_column(X: np.ndarray, names: list[str]) -> str:
    full_rank = np.linalg.matrix_rank(X)
    for j in range(X.shape[1]):
        reduced = np.delete(X, j, axis=1)
        if np.linalg.matrix_rank(reduced) == full_rank:
            return names[j]
    return names[-1]


def ols(X: np.ndarray, y, names: list[str]) -> OLSFit:
    """Least squares with classical (homoskedastic) inference.

    X must already contain its intercept column. Raises on rank deficiency,
    naming a column involved in the dependency.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if len(names) != p:
        raise StatsError("names must match design columns")
    if n <= p:
        raise StatsError(f"need more observations ({n}) than parameters ({p})")
    if np.linalg.matrix_rank(X) < p:
        raise StatsError(
            f"design is rank deficient: column '{_name_dependent_column(X, names)}' "
            "is linearly dependent on the others"
        )
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    resid = y - fitted
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    if tss <= 0:
        raise StatsError("dependent variable is constant")
    df_resid = n - p
    sigma2 = rss / df_resid
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    tvals = coef / se
    pvals = 2.0 * sps.t.sf(np.abs(tvals), df_resid)
    r2 = 1.0 - rss / tss
    adj = 1.0 - (1.0 - r2) * (n - 1) / df_resid
    return OLSFit(
        names=list(names),
        coef=coef,
        se=se,
        t=tvals,
        p=pvals,
        r2=r2,
        adj_r2=adj,
        residuals=resid,
        fitted=fitted,
        n=n,
        df_resid=df_resid,
    )


def vif(X: np.ndarray, names: list[str]) -> dict[str, float]:
    """Variance inflation 1/(1-R²_j), regressing each column on the rest.

    X excludes the intercept; each auxiliary regression adds its own.
    Perfect collinearity reports inf rather than raising.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p < 2:
        raise StatsError("VIF needs at least two predictors")
    out: dict[str, float] = {}
    for j in range(p):
        target = X[:, j]
        others = np.delete(X, j, axis=1)
        design = np.column_stack([np.ones(n), others])
        coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        tss = float(((target - target.mean()) ** 2).sum())
        if tss <= 0:
            out[names[j]] = float("inf")
            continue
        r2 = 1.0 - float(resid @ resid) / tss
        out[names[j]] = float("inf") if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out


# ---------------------------------------------------------------------------
# Region fixed effects

def region_dummies(regions) -> tuple[np.ndarray, list[str], str | None]:
    """One-hot dummies with the first (sorted) region as the reference.

    A single region yields no dummy columns.
    """
    regions = list(regions)
    levels = sorted(set(regions))
    if len(levels) <= 1:
        return np.empty((len(regions), 0)), [], levels[0] if levels else None
    ref = levels[0]
    cols = []
    names = []
    for lv in levels[1:]:
        cols.append(np.array([1.0 if r == lv else 0.0 for r in regions]))
        names.append(f"region_{lv}")
    return np.column_stack(cols), names, ref


# ---------------------------------------------------------------------------
# Stepwise selection

@dataclass
class RegressionResult:
    dependent: str
    selected: list[str]
    forced: list[str]
    names: list[str]  # const + forced + selected, design order
    coef: dict[str, float]
    se: dict[str, float]
    t: dict[str, float]
    p: dict[str, float]
    r2: float
    adj_r2: float
    vif: dict[str, float]
    residuals: list[float]
    step_adj_r2: list[float]
    barred: list[str]
    flags: list[str] = field(default_factory=list)
    morans_i: float | None = None
    morans_p: float | None = None


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    sa = a - a.mean()
    sb = b - b.mean()
    denom = math.sqrt(float(sa @ sa)) * math.sqrt(float(sb @ sb))
    if denom <= 0:
        return None
    return float(sa @ sb) / denom


def _fit(table, y, forced_cols, forced_names, selected, n):
    cols = [np.ones(n)]
    names = ["const"]
    if forced_cols.shape[1]:
        cols.append(forced_cols)
        names.extend(forced_names)
    for s in selected:
        cols.append(table[s].to_numpy(dtype=float).reshape(-1, 1))
        names.append(s)
    X = np.column_stack(cols) if len(cols) > 1 else cols[0].reshape(-1, 1)
    return ols(X, y, names)


def stepwise_select(
    table: pd.DataFrame,
    dependent: str,
    candidates: list[str],
    region_col: str | None = "region",
    r_max: float = 0.75,
    vif_max: float = 5.0,
    alpha: float = 0.05,
) -> RegressionResult:
    """Customized forward selection with forced regional fixed effects.

    Seeds with the candidate most correlated (|Pearson|) with the response;
    then repeatedly adds the candidate most correlated with the current
    residuals among those whose |Pearson| with every already-included
    candidate is at most r_max. After each addition the model is refit: if
    any selected variable's VIF exceeds vif_max the newcomer is removed and
    permanently barred; if the newcomer fails to raise adjusted R² or its
    coefficient is not significant at alpha, it is removed and selection
    stops. Region dummies are always included and exempt from every screen.
    The returned model satisfies: pairwise |r| <= r_max among selected,
    all VIFs <= vif_max, and every selected coefficient p < alpha (a final
    prune enforces this if a late addition degraded an early pick).
    """
    n = len(table)
    y = table[dependent].to_numpy(dtype=float)
    if region_col is not None and region_col in table.columns:
        forced_cols, forced_names, _ = region_dummies(table[region_col].tolist())
    else:
        forced_cols, forced_names = np.empty((n, 0)), []

    usable: list[str] = []
    flags: list[str] = []
    for c in candidates:
        vals = table[c].to_numpy(dtype=float)
        if np.isnan(vals).any():
            flags.append(f"dropped:{c}:missing values")
            continue
        if np.std(vals) <= 0:
            flags.append(f"dropped:{c}:constant")
            continue
        usable.append(c)

    corr_y = {}
    for c in usable:
        r = _pearson(table[c].to_numpy(dtype=float), y)
        if r is not None:
            corr_y[c] = abs(r)
    if not corr_y:
        raise StatsError("no admissible first candidate for stepwise selection")

    barred: set[str] = set()
    selected: list[str] = []
    base = _fit(table, y, forced_cols, forced_names, selected, n)
    current = base
    step_adj = [base.adj_r2]

    def screen_ok(c: str) -> bool:
        xc = table[c].to_numpy(dtype=float)
        for s in selected:
            r = _pearson(xc, table[s].to_numpy(dtype=float))
            if r is not None and abs(r) > r_max:
                return False
        return True

    while True:
        pool = [c for c in usable if c not in selected and c not in barred and screen_ok(c)]
        if not pool:
            break
        if not selected:
            # Seed: strongest raw correlation with the response.
            pool_scores = [(corr_y.get(c, -1.0), c) for c in pool]
            cand = max(pool_scores, key=lambda rc: (rc[0], -pool.index(rc[1])))[1]
        else:
            resid = current.residuals
            scored = []
            for c in pool:
                r = _pearson(table[c].to_numpy(dtype=float), resid)
                if r is not None:
                    scored.append((abs(r), c))
            if not scored:
                break
            best_score = max(s for s, _ in scored)
            cand = next(c for s, c in scored if s == best_score)
        trial_sel = selected + [cand]
        if n <= 1 + forced_cols.shape[1] + len(trial_sel):
            flags.append(f"stopped:insufficient observations for {cand}")
            break
        try:
            trial = _fit(table, y, forced_cols, forced_names, trial_sel, n)
        except StatsError as exc:
            barred.add(cand)
            flags.append(f"barred:{cand}:{exc}")
            continue
        if len(trial_sel) >= 2:
            mat = np.column_stack(
                [table[s].to_numpy(dtype=float) for s in trial_sel]
            )
            vifs = vif(mat, trial_sel)
            if any(v > vif_max for v in vifs.values()):
                barred.add(cand)
                flags.append(f"barred:{cand}:vif")
                continue
        new_p = trial.by_name()[cand]["p"]
        if trial.adj_r2 <= current.adj_r2 or new_p >= alpha:
            break  # newcomer rejected; forward pass is over
        selected = trial_sel
        current = trial
        step_adj.append(current.adj_r2)

    # A late addition can erode an earlier pick's significance; prune until
    # every selected coefficient clears alpha (dummies are exempt).
    while selected:
        stats_by = current.by_name()
        worst = max(selected, key=lambda s: stats_by[s]["p"])
        if stats_by[worst]["p"] < alpha:
            break
        selected = [s for s in selected if s != worst]
        flags.append(f"pruned:{worst}:insignificant after later additions")
        current = _fit(table, y, forced_cols, forced_names, selected, n)
        step_adj.append(current.adj_r2)

    if len(selected) >= 2:
        mat = np.column_stack([table[s].to_numpy(dtype=float) for s in selected])
        final_vif = vif(mat, selected)
    elif len(selected) == 1:
        final_vif = {selected[0]: 1.0}
    else:
        final_vif = {}

    by = current.by_name()
    return RegressionResult(
        dependent=dependent,
        selected=selected,
        forced=forced_names,
        names=current.names,
        coef={k: v["coef"] for k, v in by.items()},
        se={k: v["se"] for k, v in by.items()},
        t={k: v["t"] for k, v in by.items()},
        p={k: v["p"] for k, v in by.items()},
        r2=current.r2,
        adj_r2=current.adj_r2,
        vif=final_vif,
        residuals=[float(r) for r in current.residuals],
        step_adj_r2=step_adj,
        barred=sorted(barred),
        flags=flags,
    )


def refit(
    table: pd.DataFrame,
    dependent: str,
    selected: list[str],
    region_col: str | None = "region",
) -> RegressionResult:
    """Fit a fixed variable set (plus forced dummies) with no selection."""
    n = len(table)
    y = table[dependent].to_numpy(dtype=float)
    if region_col is not None and region_col in table.columns:
        forced_cols, forced_names, _ = region_dummies(table[region_col].tolist())
    else:
        forced_cols, forced_names = np.empty((n, 0)), []
    fit = _fit(table, y, forced_cols, forced_names, selected, n)
    if len(selected) >= 2:
        mat = np.column_stack([table[s].to_numpy(dtype=float) for s in selected])
        vifs = vif(mat, selected)
    elif len(selected) == 1:
        vifs = {selected[0]: 1.0}
    else:
        vifs = {}
    by = fit.by_name()
    return RegressionResult(
        dependent=dependent,
        selected=list(selected),
        forced=forced_names,
        names=fit.names,
        coef={k: v["coef"] for k, v in by.items()},
        se={k: v["se"] for k, v in by.items()},
        t={k: v["t"] for k, v in by.items()},
        p={k: v["p"] for k, v in by.items()},
        r2=fit.r2,
        adj_r2=fit.adj_r2,
        vif=vifs,
        residuals=[float(r) for r in fit.residuals],
        step_adj_r2=[fit.adj_r2],
        barred=[],
        flags=[],
    )


# ---------------------------------------------------------------------------
# Spatial autocorrelation

@dataclass
class MoransResult:
    i: float
    expected: float
    variance: float
    z: float
    p_normal: float
    p_permutation: float | None = None


def morans_i(
    residuals,
    centroids,
    permutations: int = 0,
    seed: int = 0,
) -> MoransResult:
    """Inverse-distance Moran's I with a randomization-based normal p-value.

    Weights w_ij = 1/d_ij for i != j (zero diagonal). The p-value uses the
    randomization variance (accounts for sample kurtosis); permutations > 0
    adds a two-sided empirical p from that many seeded shuffles.
    """
    z = np.asarray(residuals, dtype=float)
    xy = np.asarray(centroids, dtype=float)
    n = len(z)
    if n < 4:
        # The randomization variance below has an (n-3) factor in its
        # denominator, so inference is undefined for fewer than 4 points.
        raise StatsError("Moran's I needs at least 4 observations")
    if np.std(z) <= 0:
        raise StatsError("Moran's I undefined for constant residuals")
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    off = ~np.eye(n, dtype=bool)
    if (d[off] <= 0).any():
        a, b = np.argwhere((d <= 0) & off)[0]
        raise StatsError(f"coincident centroids for observations {a} and {b}")
    w = np.zeros((n, n))
    w[off] = 1.0 / d[off]

    zc = z - z.mean()
    s0 = float(w.sum())
    denom = float((zc**2).sum())

    def statistic(vec: np.ndarray) -> float:
        return (n / s0) * float(vec @ w @ vec) / float((vec**2).sum())

    i_obs = statistic(zc)
    e_i = -1.0 / (n - 1)
    s1 = 0.5 * float(((w + w.T) ** 2).sum())
    s2 = float(((w.sum(axis=1) + w.sum(axis=0)) ** 2).sum())
    b2 = n * float((zc**4).sum()) / denom**2
    num = n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 * s0) - b2 * (
        (n * n - n) * s1 - 2 * n * s2 + 6 * s0 * s0
    )
    var = num / ((n - 1) * (n - 2) * (n - 3) * s0 * s0) - e_i * e_i
    if var <= 0:
        raise StatsError("non-positive randomization variance")
    zscore = (i_obs - e_i) / math.sqrt(var)
    p_norm = 2.0 * sps.norm.sf(abs(zscore))

    p_perm = None
    if permutations > 0:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(permutations):
            perm = rng.permutation(zc)
            if abs(statistic(perm) - e_i) >= abs(i_obs - e_i) - 1e-15:
                hits += 1
        p_perm = (1 + hits) / (permutations + 1)
    return MoransResult(
        i=i_obs,
        expected=e_i,
        variance=var,
        z=zscore,
        p_normal=float(p_norm),
        p_permutation=p_perm,
    )


# ---------------------------------------------------------------------------
# Cross-model coefficient comparison

def coeff_ttest(b1: float, se1: float, b2: float, se2: float) -> tuple[float, float]:
    """Two-sided test of equality for coefficients from independent fits."""
    if se1 <= 0 or se2 <= 0:
        raise StatsError("standard errors must be positive")
    stat = (b1 - b2) / math.sqrt(se1 * se1 + se2 * se2)
    p = 2.0 * sps.norm.sf(abs(stat))
    return float(stat), float(p)


# ---------------------------------------------------------------------------
# Serialization

def regression_to_dict(r: RegressionResult) -> dict:
    return {
        "dependent": r.dependent,
        "selected": r.selected,
        "forced": r.forced,
        "names": r.names,
        "coef": r.coef,
        "se": r.se,
        "t": r.t,
        "p": r.p,
        "r2": r.r2,
        "adj_r2": r.adj_r2,
        "vif": r.vif,
        "step_adj_r2": r.step_adj_r2,
        "barred": r.barred,
        "flags": r.flags,
        "morans_i": r.morans_i,
        "morans_p": r.morans_p,
        "residuals": r.residuals,
    }


def write_regression_json(r: RegressionResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(regression_to_dict(r), indent=1, sort_keys=True) + "\n")


def write_coefficients_csv(results: list[RegressionResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("dependent,variable,estimate,se,t,p,vif\n")
        for r in results:
            for name in r.names:
                v = r.vif.get(name)
                fh.write(
                    f"{r.dependent},{name},{repr(r.coef[name])},{repr(r.se[name])},"
                    f"{repr(r.t[name])},{repr(r.p[name])},"
                    f"{'' if v is None else repr(float(v))}\n"
                )
