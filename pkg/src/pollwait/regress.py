"""OLS / linear-probability fits with absorbed fixed effects and clustered errors.

Fixed effects are absorbed by (iterated) within-group demeaning, the
coefficients come from a QR solve on the demeaned design, and standard
errors use the cluster sandwich with the CR1 small-sample factor

    c = G / (G - 1) * (N - 1) / (N - K)

where K counts the kept regressors plus the absorbed fixed-effect levels,
so the result matches an explicit dummy-variable regression.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateVariance,
    EmptyWindow,
    MissingField,
    RankDeficient,
    RankDeficientWarning,
    TooFewClusters,
)

RACE = ["frac_black", "frac_asian", "frac_hispanic", "frac_other"]
CONTROLS = ["frac_poverty", "population_k", "pop_density_k"]
VOLUME = "voters_per_place_k"
FE_COLUMNS = {"state": "state", "county": "county", "hour": "arrival_hour"}
DEPENDENT = {"A": "wait_min", "B": "over30"}

TERM_LABELS = {
    "frac_black": "Fraction Black",
    "frac_asian": "Fraction Asian",
    "frac_hispanic": "Fraction Hispanic",
    "frac_other": "Fraction Other Non-White",
    "frac_poverty": "Fraction Below Poverty Line",
    "population_k": "Population (1000s)",
    "pop_density_k": "Population Per Sq Mile (1000s)",
    "android": "Android (0 = iPhone)",
    VOLUME: "Voters Per Polling Place",
    f"frac_black_x_{VOLUME}": "Interaction: Black X VotersPerPoll",
    "const": "Constant",
}

# disparity ladder: regressors and fixed effects per column
LADDER = {
    "col1": (["frac_black"], ()),
    "col2": (RACE, ()),
    "col3": (RACE + CONTROLS, ()),
    "col4": (RACE + CONTROLS, ("state",)),
    "col5": (RACE + CONTROLS, ("state", "county")),
    "col6": (RACE + CONTROLS + ["android"], ("state", "county", "hour")),
}

HOUR_WINDOWS = [(0, 24), (8, 24), (9, 24), (10, 24), (10, 15), (15, 24)]


@dataclass(frozen=True)
class ModelSpec:
    dependent: str = "wait_min"
    regressors: tuple[str, ...] = ("frac_black",)
    fixed_effects: tuple[str, ...] = ()
    interactions: tuple[tuple[str, str], ...] = ()
    sample_filter: Optional[Callable[[pd.DataFrame], pd.Series]] = None
    cluster: str = "place_id"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "fixed_effects", tuple(self.fixed_effects))
        object.__setattr__(self, "interactions", tuple(tuple(p) for p in self.interactions))
        for a, b in self.interactions:
            if a not in self.regressors or b not in self.regressors:
                raise ValueError(f"interaction ({a}, {b}) references an undeclared regressor")

    @property
    def terms(self) -> list[str]:
        return list(self.regressors) + [f"{a}_x_{b}" for a, b in self.interactions]


@dataclass
class FitResult:
    coef: dict[str, float]
    se: dict[str, float]
    n: int
    r2: float
    depvar_mean: float
    n_clusters: int
    k_params: int = 0
    dropped: tuple[str, ...] = ()
    names: tuple[str, ...] = ()
    vcov: np.ndarray = field(default=None, repr=False)
    spec: Optional[ModelSpec] = field(default=None, repr=False)

    def t(self, name: str) -> float:
        return self.coef[name] / self.se[name]


def _nested(child: pd.Series, parent: pd.Series) -> bool:
    return bool((pd.DataFrame({"c": child, "p": parent}).groupby("c")["p"].nunique() <= 1).all())


def _reduce_fe(df: pd.DataFrame, fe_cols: list[str]) -> list[str]:
    """Drop fixed-effect sets that are nested in another (county absorbs state)."""
    keep = list(dict.fromkeys(fe_cols))
    for a in list(keep):
        for b in keep:
            if a != b and b in keep and a in keep and _nested(df[b], df[a]) and df[b].nunique() >= df[a].nunique():
                keep.remove(a)
                break
    return keep


def _group_means(Z: np.ndarray, codes: np.ndarray, counts: np.ndarray) -> np.ndarray:
    L = len(counts)
    return np.column_stack([np.bincount(codes, weights=Z[:, j], minlength=L) for j in range(Z.shape[1])]) / counts[:, None]


def demean(Z: np.ndarray, codes_list: Sequence[np.ndarray], tol: float = 1e-13, max_iter: int = 10_000) -> np.ndarray:
    """Project out every fixed-effect set by alternating within-group demeaning.

    Stops once every cell mean is below ``tol`` times the column scale.
    """
    Z = np.array(Z, dtype=float, copy=True)
    counts = [np.bincount(c) for c in codes_list]
    scale = np.maximum(1.0, np.abs(Z).max(axis=0)) if len(Z) else np.ones(Z.shape[1])
    for _ in range(max_iter):
        for c, n in zip(codes_list, counts):
            Z -= _group_means(Z, c, n)[c]
        if len(codes_list) == 1:
            return Z
        worst = max(np.max(np.abs(_group_means(Z, c, n)) / scale) for c, n in zip(codes_list, counts))
        if worst < tol:
            return Z
    warnings.warn("fixed-effect demeaning did not converge", RuntimeWarning, stacklevel=2)
    return Z


def absorbed_levels(codes_list: Sequence[np.ndarray]) -> int:
    """Rank of the stacked fixed-effect dummies.

    Exact for one or two sets (two-way rank = L1 + L2 - connected components);
    for three or more sets a connected design is assumed.
    """
    if not codes_list:
        return 0
    levels = [int(c.max()) + 1 for c in codes_list]
    if len(codes_list) == 1:
        return levels[0]
    if len(codes_list) == 2:
        a, b = codes_list
        n = levels[0] + levels[1]
        g = coo_matrix((np.ones(len(a)), (a, b + levels[0])), shape=(n, n))
        ncomp, _ = connected_components(g, directed=False)
        return n - ncomp
    return sum(levels) - (len(levels) - 1)


def _cluster_sums(scores: np.ndarray, codes: np.ndarray, G: int) -> np.ndarray:
    return np.column_stack([np.bincount(codes, weights=scores[:, j], minlength=G) for j in range(scores.shape[1])])


def fit(
    data: pd.DataFrame,
    spec: ModelSpec,
    correction: str = "CR1",
    on_collinear: str = "drop",
    demean_tol: float = 1e-13,
) -> FitResult:
    """Least-squares fit of ``spec`` on ``data`` with cluster-robust errors.

    Regressors that are constant within every fixed-effect cell, or collinear
    with earlier ones, are dropped with a :class:`RankDeficientWarning`
    (``on_collinear="raise"`` raises :class:`RankDeficient` instead).
    Rows are put in a canonical order first, so results do not depend on the
    input row order.
    """
    df = data if spec.sample_filter is None else data[spec.sample_filter(data)]
    fe_cols = [FE_COLUMNS.get(f, f) for f in spec.fixed_effects]
    needed = [spec.dependent, *spec.regressors, *fe_cols, spec.cluster]
    absent = [c for c in needed if c not in df.columns]
    if absent:
        raise MissingField(f"missing columns: {absent}")
    df = df.dropna(subset=list(dict.fromkeys(needed)))
    if fe_cols:
        fe_cols = _reduce_fe(df, fe_cols)
    terms = spec.terms
    y = df[spec.dependent].to_numpy(float)
    cols = [df[r].to_numpy(float) for r in spec.regressors]
    cols += [df[a].to_numpy(float) * df[b].to_numpy(float) for a, b in spec.interactions]
    X = np.column_stack(cols) if cols else np.zeros((len(df), 0))
    cl_codes = pd.factorize(df[spec.cluster], sort=True)[0]
    fe_raw = [pd.factorize(df[c], sort=True)[0] for c in fe_cols]

    order = np.lexsort([cl_codes, *fe_raw[::-1], *X.T[::-1], y])
    y, X, cl_codes = y[order], X[order], cl_codes[order]
    fe_codes = [pd.factorize(c[order])[0] for c in fe_raw]
    cl_codes = pd.factorize(cl_codes)[0]
    N = len(y)
    G = int(cl_codes.max()) + 1 if N else 0
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")

    if fe_codes:
        Z = demean(np.column_stack([y, X]), fe_codes, tol=demean_tol)
        yd, Xd = Z[:, 0], Z[:, 1:]
        names = list(terms)
        absorbed = absorbed_levels(fe_codes)
        centred = Xd
    else:
        Xd = np.column_stack([np.ones(N), X])
        yd = y
        names = ["const"] + list(terms)
        absorbed = 0
        centred = np.column_stack([np.ones(N), X - X.mean(axis=0)])

    raw_norm = np.linalg.norm(Xd if not fe_codes else X, axis=0)
    c_norm = np.linalg.norm(centred, axis=0)
    alive = c_norm > 1e-12 * np.maximum(raw_norm, 1.0)
    dropped = [names[j] for j in np.flatnonzero(~alive)]
    idx = np.flatnonzero(alive)
    if len(idx):
        norms = np.linalg.norm(Xd[:, idx], axis=0)
        _, R, P = linalg.qr(Xd[:, idx] / norms, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * diag[0])) if len(diag) else 0
        dropped += [names[idx[j]] for j in P[rank:]]
        idx = np.sort(idx[P[:rank]])
    if dropped:
        if on_collinear == "raise":
            raise RankDeficient(dropped)
        warnings.warn(f"dropped collinear regressors: {', '.join(dropped)}", RankDeficientWarning, stacklevel=2)

    kept = [names[j] for j in idx]
    K = len(kept) + absorbed
    if N <= K:
        raise RankDeficient(kept, f"{N} observations for {K} parameters")
    Xk = Xd[:, idx]
    if len(idx):
        norms = np.linalg.norm(Xk, axis=0)
        Q, R = linalg.qr(Xk / norms, mode="economic")
        beta = linalg.solve_triangular(R, Q.T @ yd) / norms
        Rinv = linalg.solve_triangular(R, np.eye(len(idx)))
        bread = (Rinv @ Rinv.T) / np.outer(norms, norms)
        u = yd - Xk @ beta
        S = _cluster_sums(Xk * u[:, None], cl_codes, G)
        meat = S.T @ S
        c = 1.0
        if correction == "CR1":
            c = G / (G - 1) * (N - 1) / (N - K)
        elif correction != "CR0":
            raise ValueError(f"unknown correction {correction}")
        V = c * bread @ meat @ bread
        se = np.sqrt(np.maximum(np.diag(V), 0.0))
    else:
        beta = np.zeros(0)
        V = np.zeros((0, 0))
        se = np.zeros(0)
        u = yd

    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(np.sum(u ** 2))
    r2 = 0.0 if sst <= 1e-12 * max(1.0, float(np.sum(y ** 2))) else min(1.0, max(0.0, 1.0 - ssr / sst))
    return FitResult(
        coef=dict(zip(kept, beta.tolist())),
        se=dict(zip(kept, se.tolist())),
        n=N,
        r2=r2,
        depvar_mean=float(y.mean()),
        n_clusters=G,
        k_params=K,
        dropped=tuple(dropped),
        names=tuple(kept),
        vcov=V,
        spec=spec,
    )


def ladder_spec(variant: str, panel: str = "A", extra: Sequence[str] = (), interactions=(), data=None) -> ModelSpec:
    regs, fes = LADDER[variant]
    regs = list(regs)
    if "android" in regs and (data is None or "android" not in data or data["android"].isna().all()):
        regs.remove("android")
    head = regs[:1] + list(extra) + regs[1:]
    return ModelSpec(
        dependent=DEPENDENT[panel],
        regressors=tuple(head),
        fixed_effects=fes,
        interactions=tuple(interactions),
        name=variant,
    )


def disparity_table(data: pd.DataFrame, variant: str, panel: str = "A", **kw) -> FitResult:
    """One column of the disparity ladder (col1..col6) for panel A (minutes) or B (over 30)."""
    if data.empty:
        raise ValueError("no observations")
    return fit(data, ladder_spec(variant, panel, data=data), **kw)


def hour_restricted(data: pd.DataFrame, windows=HOUR_WINDOWS, panel: str = "A") -> list[FitResult]:
    """Column-4 specification on arrivals within each ``[from_hour, to_hour)`` window."""
    out = []
    for lo, hi in windows:
        if not 0 <= lo < hi <= 24:
            raise ValueError(f"bad window ({lo}, {hi})")
        sub = data[(data["arrival_hour"] >= lo) & (data["arrival_hour"] < hi)]
        if sub.empty:
            raise EmptyWindow(f"no arrivals in [{lo}, {hi})")
        out.append(disparity_table(sub, "col4", panel))
    return out


@dataclass
class CongestionResult:
    controls: list[FitResult]
    interaction: list[FitResult]
    lines: pd.DataFrame


def predicted_lines(res: FitResult, grid) -> pd.DataFrame:
    """Predicted wait at frac_black 0 and 1 over a volume grid from the interacted fit."""
    grid = np.asarray(grid, float)
    b = res.coef
    inter = f"frac_black_x_{VOLUME}"
    base = b.get("const", 0.0) + b[VOLUME] * grid
    fb1 = base + b["frac_black"] + b[inter] * grid
    return pd.DataFrame({"volume_k": grid, "pred_fb0": base, "pred_fb1": fb1, "gap": fb1 - base})


def congestion_models(data: pd.DataFrame, panel: str = "A", n_grid: int = 101) -> CongestionResult:
    """Volume controls and volume interactions over the ladder."""
    if VOLUME not in data.columns or data[VOLUME].isna().all():
        raise MissingField(f"{VOLUME} not available")
    vol = data[VOLUME].dropna()
    if float(vol.var()) <= 1e-12 * max(1.0, float((vol ** 2).mean())):
        raise RankDeficient([VOLUME], "voters-per-place has zero variance")
    controls, inter = [], []
    for v in ["col1", "col2", "col3", "col4", "col5"]:
        controls.append(fit(data, ladder_spec(v, panel, extra=[VOLUME], data=data)))
        spec = ladder_spec(v, panel, extra=[VOLUME], interactions=[("frac_black", VOLUME)], data=data)
        inter.append(fit(data, spec))
    hi = float(np.quantile(vol, 0.99))
    lines = predicted_lines(inter[0], np.linspace(0.0, hi, n_grid))
    return CongestionResult(controls, inter, lines)


def region_effects(
    data: pd.DataFrame,
    region: str,
    min_n: int = 30,
    dependent: str = "wait_min",
    cluster: str = "place_id",
) -> pd.DataFrame:
    """Per-region mean wait and frac_black disparity.

    The disparity is the region x frac_black interaction from one pooled
    regression on region fixed effects and those interactions (no constant),
    with clustered errors. The design is block diagonal, so the fit is done
    region by region in closed form.
    """
    for c in (region, dependent, "frac_black", cluster):
        if c not in data.columns:
            raise MissingField(c)
    df = data.dropna(subset=[region, dependent, "frac_black", cluster])
    codes, labels = pd.factorize(df[region], sort=True)
    R = len(labels)
    y = df[dependent].to_numpy(float)
    x = df["frac_black"].to_numpy(float)
    n = np.bincount(codes, minlength=R).astype(float)
    ybar = np.bincount(codes, weights=y, minlength=R) / n
    xbar = np.bincount(codes, weights=x, minlength=R) / n
    yt = y - ybar[codes]
    xt = x - xbar[codes]
    sd = np.sqrt(np.bincount(codes, weights=yt ** 2, minlength=R) / np.maximum(n - 1, 1))
    sd[n < 2] = np.nan
    sxx = np.bincount(codes, weights=xt ** 2, minlength=R)
    sxy = np.bincount(codes, weights=xt * yt, minlength=R)
    scale = np.bincount(codes, weights=x ** 2, minlength=R)
    valid = sxx > 1e-12 * np.maximum(scale, 1.0)
    b = np.where(valid, sxy / np.where(valid, sxx, 1.0), 0.0)
    u = yt - b[codes] * xt

    cl = pd.factorize(df[cluster], sort=True)[0]
    G = int(cl.max()) + 1 if len(cl) else 0
    N = len(y)
    K = R + int(valid.sum())
    pair = pd.factorize(pd.Series(cl) * R + codes)[0]
    pair_region = np.zeros(pair.max() + 1 if len(pair) else 0, dtype=np.int64)
    pair_region[pair] = codes
    s = np.bincount(pair, weights=xt * u)
    meat = np.bincount(pair_region, weights=s ** 2, minlength=R)
    if G >= 2 and N > K:
        c = G / (G - 1) * (N - 1) / (N - K)
        se = np.where(valid, np.sqrt(c * meat) / np.where(valid, sxx, 1.0), np.nan)
    else:
        se = np.full(R, np.nan)
    flag = np.where(~valid, "constant_frac_black", np.where(n < min_n, "small_n", ""))
    return pd.DataFrame(
        {
            "region": labels.astype(str),
            "n": n.astype(int),
            "mean": ybar,
            "sd": sd,
            "disparity": np.where(valid, b, np.nan),
            "disparity_se": se,
            "flag": flag,
        }
    )


@dataclass(frozen=True)
class BivariateResult:
    slope: float
    se: float
    r: float
    intercept: float
    n: int


def bivariate(xs, ys) -> BivariateResult:
    """Simple OLS slope with HC1 standard error and Pearson r."""
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-12 * max(1.0, float(x @ x)):
        raise DegenerateVariance("covariate has zero variance")
    slope = float(xc @ yc) / sxx
    e = yc - slope * xc
    se = float(np.sqrt(n / (n - 2) * np.sum(e ** 2 * xc ** 2)) / sxx)
    syy = float(yc @ yc)
    r = float(xc @ yc / np.sqrt(sxx * syy)) if syy > 0 else 0.0
    return BivariateResult(slope, se, r, float(y.mean() - slope * x.mean()), n)


def results_table(results: Sequence[FitResult], flags: Optional[dict[str, Sequence[str]]] = None) -> pd.DataFrame:
    """Paper-style layout: one column per fit, coefficient and SE rows per term."""
    terms: list[str] = []
    for r in results:
        terms += [t for t in r.names if t not in terms and t != "const"]
    rows = []
    for t in terms:
        label = TERM_LABELS.get(t, t)
        rows.append([label] + [r.coef.get(t, np.nan) for r in results])
        rows.append([f"{label} (se)"] + [r.se.get(t, np.nan) for r in results])
    rows.append(["N"] + [r.n for r in results])
    rows.append(["R2"] + [r.r2 for r in results])
    rows.append(["DepVarMean"] + [r.depvar_mean for r in results])
    rows.append(["Clusters"] + [r.n_clusters for r in results])
    for name, vals in (flags or {}).items():
        rows.append([name] + list(vals))
    cols = ["term"] + [f"({i + 1})" for i in range(len(results))]
    return pd.DataFrame(rows, columns=cols)


def ladder_flags(variants: Sequence[str]) -> dict[str, list[str]]:
    def yn(b):
        return "Yes" if b else "No"

    return {
        "Polling Area Controls?": [yn("frac_poverty" in LADDER[v][0]) for v in variants],
        "State FE?": [yn("state" in LADDER[v][1]) for v in variants],
        "County FE?": [yn("county" in LADDER[v][1]) for v in variants],
        "Hour of Day FE?": [yn("hour" in LADDER[v][1]) for v in variants],
    }
