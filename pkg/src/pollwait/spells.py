"""Dwell spells: maximal runs of consecutive pings inside a place's radius.

A spell's lower bound is the span between its first and last inside pings;
its upper bound is the span between the bracketing outside pings. Runs are
cut at local midnight so every spell belongs to one local day.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import MissingBound, UnsortedInput
from .geo import EARTH_RADIUS_M, contains_many, haversine_many
from .ingest import PingTable, PollingPlace, StudyCalendar

HULL_FALLBACK_M = 15.0

SPELL_COLUMNS = [
    "device_id",
    "place_id",
    "day",
    "lower_min",
    "upper_min",
    "midpoint_min",
    "arrival_hour",
    "hull_ping",
]


@dataclass(frozen=True)
class DwellSpell:
    device_id: str
    place_id: str
    day: str
    t_out_before: Optional[float]
    t_first_in: float
    t_last_in: float
    t_out_after: Optional[float]
    arrival_hour: int
    hull_ping: bool

    @property
    def lower_min(self) -> float:
        return (self.t_last_in - self.t_first_in) / 60.0

    @property
    def upper_min(self) -> Optional[float]:
        if self.t_out_before is None or self.t_out_after is None:
            return None
        return (self.t_out_after - self.t_out_before) / 60.0


def wait_time(spell, lam: float = 0.5) -> float:
    """Convex combination ``lam * upper + (1 - lam) * lower`` in minutes.

    ``spell`` may be a DwellSpell or anything with ``lower_min``/``upper_min``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    lower = float(spell.lower_min)
    upper = spell.upper_min
    if upper is None or (isinstance(upper, float) and math.isnan(upper)):
        if lam > 0:
            raise MissingBound("spell has no outside bracketing ping")
        return lower
    return lam * float(upper) + (1.0 - lam) * lower


def wait_times(spells: pd.DataFrame, lam: float = 0.5) -> np.ndarray:
    """Vectorised :func:`wait_time`; missing upper bounds give NaN unless ``lam == 0``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    lower = spells["lower_min"].to_numpy(float)
    if lam == 0:
        return lower.copy()
    return lam * spells["upper_min"].to_numpy(float) + (1.0 - lam) * lower


def local_day_number(t, offset_hours) -> np.ndarray:
    return np.floor_divide(np.asarray(t, dtype=np.int64) + np.round(np.asarray(offset_hours) * 3600).astype(np.int64), 86400)


def day_string(daynum) -> np.ndarray:
    return np.datetime_as_string(np.asarray(daynum, dtype=np.int64).astype("datetime64[D]"))


def day_number(day) -> int:
    if isinstance(day, str):
        day = dt.date.fromisoformat(day)
    return (day - dt.date(1970, 1, 1)).days


def _unit_xyz(lat, lon) -> np.ndarray:
    la = np.radians(np.asarray(lat, dtype=float))
    lo = np.radians(np.asarray(lon, dtype=float))
    return np.column_stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)])


class PlaceIndex:
    """Read-only spatial index over polling-place centroids."""

    def __init__(self, places: Sequence[PollingPlace], calendar: Optional[StudyCalendar] = None):
        self.places = list(places)
        self.place_id = np.array([p.place_id for p in self.places], dtype=object)
        self.lat = np.array([p.centroid.lat for p in self.places], dtype=float)
        self.lon = np.array([p.centroid.lon for p in self.places], dtype=float)
        self.offset = np.array(
            [calendar.offset(p.state) if calendar else 0.0 for p in self.places], dtype=float
        )
        self.footprints = [p.footprint for p in self.places]
        self._tree = cKDTree(_unit_xyz(self.lat, self.lon)) if self.places else None

    def __len__(self):
        return len(self.places)

    def pairs_within(self, lat, lon, r: float):
        """All (point index, place index, distance) with haversine distance <= r."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        if self._tree is None or len(lat) == 0:
            return empty
        # chord for r, padded so the tree never misses a true neighbour
        chord = 2 * math.sin(min(math.pi / 2, r * (1 + 1e-6) / (2 * EARTH_RADIUS_M))) + 1e-12
        xyz = _unit_xyz(lat, lon)
        k = min(2, len(self))
        while True:
            d, j = self._tree.query(xyz, k=k, distance_upper_bound=chord)
            d = d.reshape(len(lat), k)
            j = j.reshape(len(lat), k)
            if k >= len(self) or not np.isfinite(d[:, -1]).any():
                break
            k = min(2 * k, len(self))
        hit = np.isfinite(d)
        pi, col = np.nonzero(hit)
        pl = j[pi, col]
        dist = haversine_many(lat[pi], lon[pi], self.lat[pl], self.lon[pl])
        keep = dist <= r
        return pi[keep].astype(np.int64), pl[keep].astype(np.int64), dist[keep]

    def nearest(self, lat, lon, max_r: float):
        """Nearest place index and distance per point (-1 / inf beyond ``max_r``)."""
        lat = np.asarray(lat, dtype=float)
        n = len(lat)
        idx = np.full(n, -1, dtype=np.int64)
        dist = np.full(n, np.inf)
        if self._tree is None or n == 0:
            return idx, dist
        chord = 2 * math.sin(min(math.pi / 2, max_r * (1 + 1e-6) / (2 * EARTH_RADIUS_M))) + 1e-12
        _, j = self._tree.query(_unit_xyz(lat, lon), k=1, distance_upper_bound=chord)
        ok = j < len(self)
        idx[ok] = j[ok]
        dist[ok] = haversine_many(lat[ok], np.asarray(lon, float)[ok], self.lat[j[ok]], self.lon[j[ok]])
        far = dist > max_r
        idx[far] = -1
        dist[far] = np.inf
        return idx, dist


def _ping_frame(pings) -> pd.DataFrame:
    return pings.frame if isinstance(pings, PingTable) else pings


def _check_sorted(dev_codes: np.ndarray, t: np.ndarray) -> None:
    if len(t) < 2:
        return
    same = dev_codes[1:] == dev_codes[:-1]
    if np.any(same & (t[1:] < t[:-1])):
        raise UnsortedInput("pings must be sorted by time within each device")


def _hull_flags(index: PlaceIndex, place_idx, lat, lon, dist) -> np.ndarray:
    flags = np.zeros(len(place_idx), dtype=bool)
    order = np.argsort(place_idx, kind="stable")
    bounds = np.flatnonzero(np.diff(place_idx[order])) + 1
    for grp in np.split(order, bounds):
        if len(grp) == 0:
            continue
        fp = index.footprints[place_idx[grp[0]]]
        if fp is None:
            flags[grp] = dist[grp] <= HULL_FALLBACK_M
        else:
            flags[grp] = contains_many(fp, lat[grp], lon[grp])
    return flags


def extract_spells(
    pings,
    index: PlaceIndex,
    radius_m: float,
    day=None,
) -> pd.DataFrame:
    """Segment each device's pings into dwell spells at every place.

    Returns one row per spell with epoch-second bounds (``t_out_before``,
    ``t_first_in``, ``t_last_in``, ``t_out_after``; missing brackets are NaN),
    ``lower_min``, ``upper_min``, ``midpoint_min``, local ``day`` (ISO string),
    local ``arrival_hour``, ``hull_ping`` and ``n_pings``. When ``day`` is
    given only spells on that local day are returned.
    """
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    f = _ping_frame(pings)
    dev_codes, dev_labels = pd.factorize(f["device_id"], sort=False)
    t = f["t"].to_numpy(np.int64)
    lat = f["lat"].to_numpy(float)
    lon = f["lon"].to_numpy(float)
    _check_sorted(dev_codes, t)

    pi, pl, dist = index.pairs_within(lat, lon, radius_m)
    if len(pi) == 0:
        return _empty_spells()
    order = np.lexsort((pi, pl))
    pi, pl, dist = pi[order], pl[order], dist[order]
    off = index.offset[pl]
    lday = local_day_number(t[pi], off)

    new = np.ones(len(pi), dtype=bool)
    new[1:] = (
        (pl[1:] != pl[:-1])
        | (pi[1:] != pi[:-1] + 1)
        | (dev_codes[pi[1:]] != dev_codes[pi[:-1]])
        | (lday[1:] != lday[:-1])
    )
    run_id = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    ends = np.r_[starts[1:], len(pi)] - 1

    first = pi[starts]
    last = pi[ends]
    rplace = pl[starts]
    rday = lday[starts]
    rdev = dev_codes[first]
    roff = index.offset[rplace]

    n = len(t)
    before = first - 1
    ok_b = before >= 0
    bi = np.where(ok_b, before, 0)
    ok_b &= (dev_codes[bi] == rdev) & (local_day_number(t[bi], roff) == rday)
    after = last + 1
    ok_a = after < n
    ai = np.where(ok_a, after, 0)
    ok_a &= (dev_codes[ai] == rdev) & (local_day_number(t[ai], roff) == rday)

    hull = _hull_flags(index, pl, lat[pi], lon[pi], dist)
    run_hull = np.zeros(len(starts), dtype=bool)
    np.logical_or.at(run_hull, run_id, hull)

    t_first = t[first].astype(float)
    t_last = t[last].astype(float)
    t_ob = np.where(ok_b, t[bi], np.nan)
    t_oa = np.where(ok_a, t[ai], np.nan)
    lower = (t_last - t_first) / 60.0
    upper = (t_oa - t_ob) / 60.0
    local_first = t[first] + np.round(roff * 3600).astype(np.int64)
    out = pd.DataFrame(
        {
            "device_id": np.asarray(dev_labels, dtype=object)[rdev],
            "place_id": index.place_id[rplace],
            "day": day_string(rday),
            "t_out_before": t_ob,
            "t_first_in": t_first,
            "t_last_in": t_last,
            "t_out_after": t_oa,
            "lower_min": lower,
            "upper_min": upper,
            "midpoint_min": 0.5 * (lower + upper),
            "arrival_hour": ((local_first % 86400) // 3600).astype(int),
            "hull_ping": run_hull,
            "n_pings": ends - starts + 1,
        }
    )
    if day is not None:
        out = out[out["day"] == str(day)]
    out = out.sort_values(["device_id", "t_first_in", "place_id"], kind="mergesort")
    return out.reset_index(drop=True)


def _empty_spells() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "device_id": pd.Series(dtype=object),
            "place_id": pd.Series(dtype=object),
            "day": pd.Series(dtype=object),
            "t_out_before": pd.Series(dtype=float),
            "t_first_in": pd.Series(dtype=float),
            "t_last_in": pd.Series(dtype=float),
            "t_out_after": pd.Series(dtype=float),
            "lower_min": pd.Series(dtype=float),
            "upper_min": pd.Series(dtype=float),
            "midpoint_min": pd.Series(dtype=float),
            "arrival_hour": pd.Series(dtype=int),
            "hull_ping": pd.Series(dtype=bool),
            "n_pings": pd.Series(dtype=int),
        }
    )


def merge_same_place(spells: pd.DataFrame) -> tuple[pd.DataFrame, int]:
    """Keep one spell per (device, place, day): the one with the largest upper bound.

    A missing upper bound ranks above any finite one since the visit is
    unbounded above. Ties go to the earliest spell. Returns the kept spells
    and the number discarded.
    """
    if spells.empty:
        return spells.copy(), 0
    key = spells["upper_min"].fillna(np.inf)
    ranked = spells.assign(_key=-key).sort_values(
        ["device_id", "place_id", "day", "_key", "t_first_in"], kind="mergesort"
    )
    kept = ranked.drop_duplicates(["device_id", "place_id", "day"], keep="first").drop(columns="_key")
    kept = kept.sort_values(["device_id", "t_first_in", "place_id"], kind="mergesort").reset_index(drop=True)
    return kept, len(spells) - len(kept)


def spells_to_records(spells: pd.DataFrame) -> list[DwellSpell]:
    def opt(x):
        return None if np.isnan(x) else float(x)

    return [
        DwellSpell(
            r.device_id, r.place_id, r.day, opt(r.t_out_before), float(r.t_first_in),
            float(r.t_last_in), opt(r.t_out_after), int(r.arrival_hour), bool(r.hull_ping),
        )
        for r in spells.itertuples(index=False)
    ]


def export_frame(spells: pd.DataFrame) -> pd.DataFrame:
    """Columns of the ``spells.csv`` export."""
    return spells[SPELL_COLUMNS].assign(hull_ping=spells["hull_ping"].astype(int))
