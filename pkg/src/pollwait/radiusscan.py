"""Unique-device counts by day and radius, and the target-vs-other-days curve."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import NonPositiveCurve, SaturationWarning
from .ingest import PingTable
from .spells import PlaceIndex, day_string, local_day_number


@dataclass(frozen=True)
class DifferentialCurve:
    radii: tuple[float, ...]
    election_day_counts: tuple[int, ...]
    other_day_mean_counts: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly increasing")

    @property
    def diffs(self) -> np.ndarray:
        return np.asarray(self.election_day_counts, float) - np.asarray(self.other_day_mean_counts, float)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.radii, self.diffs.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "radius_m": self.radii,
                "count_target": self.election_day_counts,
                "mean_count_other": self.other_day_mean_counts,
                "diff": self.diffs,
            }
        )


def device_day_min_distance(pings, index: PlaceIndex, max_r: float) -> pd.DataFrame:
    """Closest approach to any place centroid per (device, local day), within ``max_r``.

    The local day uses the UTC offset of the nearest place.
    """
    f = pings.frame if isinstance(pings, PingTable) else pings
    idx, dist = index.nearest(f["lat"].to_numpy(float), f["lon"].to_numpy(float), max_r)
    near = idx >= 0
    if not near.any():
        return pd.DataFrame({"device_id": [], "day": [], "min_dist": []})
    day = day_string(local_day_number(f["t"].to_numpy(np.int64)[near], index.offset[idx[near]]))
    frame = pd.DataFrame({"device_id": f["device_id"].to_numpy(object)[near], "day": day, "min_dist": dist[near]})
    return frame.groupby(["device_id", "day"], sort=True, as_index=False)["min_dist"].min()


def daily_counts(min_dist: pd.DataFrame, radii: Sequence[float], days: Sequence[str]) -> pd.DataFrame:
    """Distinct devices within each radius on each day (days x radii frame)."""
    out = {}
    for day in days:
        d = np.sort(min_dist.loc[min_dist["day"] == day, "min_dist"].to_numpy(float))
        out[day] = np.searchsorted(d, np.asarray(radii, float), side="right")
    return pd.DataFrame.from_dict(out, orient="index", columns=list(radii))


def unique_devices(pings, index: PlaceIndex, r: float, day) -> int:
    """Distinct devices with a ping within ``r`` of any place centroid on ``day``."""
    if r <= 0:
        raise ValueError("radius must be positive")
    md = device_day_min_distance(pings, index, r)
    return int((md["day"] == str(day)).sum())


def differential_curve(pings, index: PlaceIndex, radii, target_day, other_days) -> DifferentialCurve:
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("radii must be non-empty")
    other_days = [str(d) for d in other_days]
    if not other_days:
        raise ValueError("need at least one comparison day")
    md = device_day_min_distance(pings, index, max(radii))
    counts = daily_counts(md, radii, [str(target_day)] + other_days)
    tgt = counts.loc[str(target_day)].to_numpy(int)
    other = counts.loc[other_days].to_numpy(float).mean(axis=0)
    return DifferentialCurve(tuple(radii), tuple(int(x) for x in tgt), tuple(float(x) for x in other))


def select_radius(curve: DifferentialCurve, gain_threshold: float = 0.02) -> float:
    """Smallest radius whose relative gain to the next radius falls below the threshold."""
    if len(curve.radii) < 3:
        raise ValueError("curve needs at least 3 points")
    diff = curve.diffs
    if np.all(diff <= 0):
        raise NonPositiveCurve("target day never exceeds the comparison days")
    for k in range(len(diff) - 1):
        if diff[k] <= 0:
            continue
        if (diff[k + 1] - diff[k]) / diff[k] < gain_threshold:
            return curve.radii[k]
    warnings.warn("differential curve still rising at the largest radius", SaturationWarning, stacklevel=2)
    return curve.radii[-1]
