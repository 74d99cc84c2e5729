"""Descriptive wait-time statistics: densities, decile splits, hourly profiles."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from .errors import DegenerateField, EmptyInput


def _kernel(u: np.ndarray, kind: str) -> np.ndarray:
    a = np.abs(u)
    if kind == "epanechnikov":
        return np.where(a <= 1, 0.75 * (1 - u * u), 0.0)
    if kind == "triangular":
        return np.where(a <= 1, 1 - a, 0.0)
    raise ValueError(f"unknown kernel {kind}")


def kde(values, half_width: float = 1.0, grid=None, kernel: str = "epanechnikov") -> pd.DataFrame:
    """Bounded-support kernel density of ``values`` evaluated on ``grid``.

    ``half_width`` is the kernel's support radius in the units of ``values``.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        raise EmptyInput("no values")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    if grid is None:
        grid = np.arange(math.floor(x.min() - half_width), math.ceil(x.max() + half_width) + 1e-9, 0.1)
    g = np.asarray(grid, dtype=float)
    xs = np.sort(x)
    dens = np.zeros(len(g))
    # only points within one half-width of a grid node contribute
    lo = np.searchsorted(xs, g - half_width, side="left")
    hi = np.searchsorted(xs, g + half_width, side="right")
    for i in range(len(g)):
        if hi[i] > lo[i]:
            dens[i] = _kernel((g[i] - xs[lo[i]:hi[i]]) / half_width, kernel).sum()
    dens /= len(x) * half_width
    return pd.DataFrame({"x": g, "density": dens})


def histogram(values, bin_width: float = 1.5, upper: float = 120.0) -> pd.DataFrame:
    """Left-closed bins ``[k*w, (k+1)*w)`` from 0 up to ``upper``."""
    x = np.asarray(values, dtype=float)
    edges = np.arange(0.0, upper + bin_width, bin_width)
    k = np.floor(x / bin_width).astype(int)
    k = k[(k >= 0) & (k < len(edges) - 1)]
    counts = np.bincount(k, minlength=len(edges) - 1)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def decile_split(rows: pd.DataFrame, field: str, place_col: str = "place_id") -> tuple[pd.DataFrame, pd.DataFrame]:
    """Voters at the bottom and top decile of polling places ranked by ``field``.

    Cut points are the 10th and 90th place-level order statistics; places tied
    at a cut point are included, so decile place counts can exceed P/10.
    """
    per_place = rows.groupby(place_col, sort=True)[field].first()
    vals = per_place.to_numpy(float)
    if per_place.nunique() < 10:
        raise DegenerateField(f"{field} has fewer than 10 distinct place values")
    P = len(vals)
    s = np.sort(vals)
    k = math.ceil(P / 10)
    lo_cut, hi_cut = s[k - 1], s[P - k]
    bottom = set(per_place.index[vals <= lo_cut])
    top = set(per_place.index[vals >= hi_cut])
    return rows[rows[place_col].isin(bottom)], rows[rows[place_col].isin(top)]


def share_over(rows, threshold: float = 30.0, col: str = "wait_min") -> float:
    w = rows[col].to_numpy(float) if isinstance(rows, pd.DataFrame) else np.asarray(rows, float)
    if len(w) == 0:
        raise EmptyInput("no rows")
    return float(np.mean(w > threshold))


def hourly_profile(rows: pd.DataFrame, group_col=None, col: str = "wait_min") -> pd.DataFrame:
    """Voter volume and mean wait per local arrival hour (optionally per group)."""
    keys = ["arrival_hour"] if group_col is None else [group_col, "arrival_hour"]
    g = rows.groupby(keys, sort=True)[col].agg(["size", "mean"]).reset_index()
    g = g.rename(columns={"arrival_hour": "hour", "size": "volume", "mean": "mean_wait"})
    if group_col is None:
        g["group"] = "all"
    else:
        g = g.rename(columns={group_col: "group"})
        g["group"] = g["group"].astype(str)
    return g[["hour", "volume", "mean_wait", "group"]]
