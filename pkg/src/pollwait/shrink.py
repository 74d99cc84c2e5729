"""Empirical-Bayes shrinkage of noisy group estimates toward a precision-weighted mean.

The hyper-parameters solve the moment fixed point

    w_g   = 1 / (tau2 + se_g^2)
    mu    = sum(w_g * raw_g) / sum(w_g)
    tau2  = max(0, sum(w_g * ((raw_g - mu)^2 - se_g^2)) / sum(w_g))

and each group is pulled toward ``mu`` by ``tau2 / (tau2 + se_g^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class GroupEstimate:
    group_id: str
    raw: float
    se: float
    n: int = 0


@dataclass
class EBResult:
    adjusted: dict[str, float]
    mu: float
    tau2: float
    iterations: int
    converged: bool
    clamped: bool
    single_group: bool = False
    excluded: list[str] = field(default_factory=list)

    def as_pairs(self) -> list[tuple[str, float]]:
        return list(self.adjusted.items())


def eb_adjust(groups: Sequence[GroupEstimate], tol: float = 1e-8, max_iter: int = 1000) -> EBResult:
    """Shrink ``raw`` toward the fitted grand mean.

    Groups with a non-finite estimate or non-positive/non-finite SE are
    excluded and listed. A single usable group is returned unchanged.
    Failing to converge returns the last iterate with ``converged=False``.
    """
    usable = [g for g in groups if math.isfinite(g.raw) and math.isfinite(g.se) and g.se > 0]
    excluded = [g.group_id for g in groups if g not in usable]
    if len(usable) == 0:
        return EBResult({}, math.nan, math.nan, 0, False, False, False, excluded)
    if len(usable) == 1:
        g = usable[0]
        return EBResult({g.group_id: g.raw}, g.raw, 0.0, 0, True, False, True, excluded)

    raw = np.array([g.raw for g in usable], dtype=float)
    v = np.array([g.se for g in usable], dtype=float) ** 2
    mu = float(np.mean(raw))
    tau2 = max(0.0, float(np.var(raw) - np.mean(v)))
    converged = False
    clamped = False
    it = 0
    for it in range(1, max_iter + 1):
        w = 1.0 / (tau2 + v)
        mu_new = float(np.sum(w * raw) / np.sum(w))
        est = float(np.sum(w * ((raw - mu_new) ** 2 - v)) / np.sum(w))
        clamped = est < 0
        tau2_new = max(0.0, est)
        step = abs(mu_new - mu) + abs(tau2_new - tau2)
        mu, tau2 = mu_new, tau2_new
        if step < tol:
            converged = True
            break
    factor = tau2 / (tau2 + v)
    adj = mu + factor * (raw - mu)
    return EBResult(
        {g.group_id: float(a) for g, a in zip(usable, adj)}, mu, tau2, it, converged, clamped, False, excluded
    )


REGION_COLUMNS = [
    "region",
    "n",
    "raw_mean",
    "sd",
    "adjusted_mean",
    "raw_disparity",
    "disparity_se",
    "adjusted_disparity",
]


def adjust_region_tables(effects: pd.DataFrame, min_n: int = 30) -> pd.DataFrame:
    """Shrink region means and disparities independently.

    ``effects`` is the output of :func:`pollwait.regress.region_effects`.
    Regions under ``min_n`` observations are kept with blank adjusted fields.
    """
    ok = effects["n"] >= min_n
    mean_se = effects["sd"] / np.sqrt(effects["n"])
    means = eb_adjust(
        [GroupEstimate(r, m, s, n) for r, m, s, n, k in zip(effects["region"], effects["mean"], mean_se, effects["n"], ok) if k]
    )
    disp = eb_adjust(
        [
            GroupEstimate(r, d, s, n)
            for r, d, s, n, k in zip(effects["region"], effects["disparity"], effects["disparity_se"], effects["n"], ok)
            if k
        ]
    )
    return pd.DataFrame(
        {
            "region": effects["region"],
            "n": effects["n"],
            "raw_mean": effects["mean"],
            "sd": effects["sd"],
            "adjusted_mean": [means.adjusted.get(r, np.nan) for r in effects["region"]],
            "raw_disparity": effects["disparity"],
            "disparity_se": effects["disparity_se"],
            "adjusted_disparity": [disp.adjusted.get(r, np.nan) for r in effects["region"]],
        }
    )[REGION_COLUMNS]
