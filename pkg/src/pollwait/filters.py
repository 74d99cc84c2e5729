"""Likely-voter filter chain with per-stage attrition accounting."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .ingest import PingTable, StudyCalendar
from .spells import PlaceIndex, day_number, merge_same_place

# (max_upper_min, min_upper_floor) for the reasonable-values variants
REASONABLE_VALUES = {
    "RV1": (300.0, None),
    "RV2": (240.0, None),
    "RV3": (180.0, None),
    "RV4": (120.0, None),
    "RV5": (120.0, 1.5),
    "RV6": (120.0, 2.0),
    "RV7": (60.0, 2.0),
    "RV8": (60.0, 2.5),
    "RV9": (60.0, 3.0),
    "RV10": (60.0, 4.0),
}

STAGES = ("single_place", "exclusion_window", "hull_ping", "consistency", "reasonable_values")


@dataclass(frozen=True)
class FilterConfig:
    min_upper_min: float = 1.0
    max_upper_min: float = 120.0
    min_upper_floor: Optional[float] = None
    require_hull_ping: bool = True
    consistency_hours: int = 12
    exclusion_pre_days: int = 7
    exclusion_post_days: int = 7
    single_place: bool = True
    strict_cross_place: bool = False
    # presence on an exclusion day means an upper bound above this (or no upper bound)
    exclusion_upper_min: float = 1.0
    # spells lacking an outside bracket use their lower bound as upper
    allow_missing_upper: bool = False

    def __post_init__(self):
        if not 0 <= self.min_upper_min < self.max_upper_min:
            raise ValueError("need 0 <= min_upper_min < max_upper_min")
        if self.consistency_hours < 1 or self.consistency_hours > 24:
            raise ValueError("consistency_hours must be in [1, 24]")

    @classmethod
    def reasonable_values(cls, name: str, **kw) -> "FilterConfig":
        hi, lo = REASONABLE_VALUES[name]
        return cls(max_upper_min=hi, min_upper_floor=lo, **kw)


@dataclass
class AttritionReport:
    stages: list[tuple[str, int, int]] = field(default_factory=list)

    def add(self, name: str, devices_in: int, devices_out: int) -> None:
        if self.stages:
            assert devices_in == self.stages[-1][2]
        assert devices_out <= devices_in
        self.stages.append((name, devices_in, devices_out))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.stages, columns=["stage", "devices_in", "devices_out"])

    @property
    def survivors(self) -> int:
        return self.stages[-1][2] if self.stages else 0


class HourMasks:
    """Per (device, local day) 24-bit masks of clock hours with at least one ping.

    Built once per distinct UTC offset so repeated filter runs (placebo days,
    robustness variants) share the work.
    """

    def __init__(self, pings, offsets):
        f = pings.frame if isinstance(pings, PingTable) else pings
        self._tables: dict[float, pd.Series] = {}
        t = f["t"].to_numpy(np.int64)
        dev = f["device_id"].to_numpy(dtype=object)
        for off in sorted(set(float(o) for o in offsets)):
            local = t + int(round(off * 3600))
            day = local // 86400
            hour = (local % 86400) // 3600
            frame = pd.DataFrame({"device_id": dev, "day": day, "hour": hour}).drop_duplicates()
            frame["bits"] = np.left_shift(np.int64(1), frame["hour"].to_numpy())
            # distinct hours, so summing the bits is an OR
            self._tables[off] = frame.groupby(["device_id", "day"], sort=True)["bits"].sum()

    def lookup(self, device_ids, day: int, offsets) -> np.ndarray:
        out = np.zeros(len(device_ids), dtype=np.int64)
        device_ids = np.asarray(device_ids, dtype=object)
        offsets = np.asarray(offsets, dtype=float)
        for off in np.unique(offsets):
            sel = offsets == off
            table = self._tables[float(off)]
            idx = pd.MultiIndex.from_arrays([device_ids[sel], np.full(sel.sum(), day, dtype=np.int64)])
            out[sel] = table.reindex(idx).fillna(0).to_numpy(dtype=np.int64)
        return out


def has_consecutive_hours(masks, k: int) -> np.ndarray:
    """True where a mask has k consecutive set bits."""
    m = np.asarray(masks, dtype=np.int64)
    acc = m.copy()
    for s in range(1, k):
        acc &= m >> s
    return acc != 0


def _effective_upper(spells: pd.DataFrame, cfg: FilterConfig) -> pd.Series:
    up = spells["upper_min"]
    if cfg.allow_missing_upper:
        up = up.fillna(spells["lower_min"])
    return up


def apply_filters(
    spells: pd.DataFrame,
    pings,
    config: FilterConfig,
    calendar: StudyCalendar,
    index: PlaceIndex,
) -> tuple[pd.DataFrame, AttritionReport]:
    """Run the likely-voter chain for ``calendar.target_day``.

    ``spells`` covers the target day and its exclusion windows (merged or
    not); ``pings`` is a ping table or prebuilt :class:`HourMasks`. Returns
    the surviving target-day spells (one per device) and the attrition report.
    """
    cfg = config
    report = AttritionReport()
    spells, _ = merge_same_place(spells)
    target = calendar.target_day.isoformat()
    eff = _effective_upper(spells, cfg)
    on_day = spells["day"] == target

    cand = spells[on_day & (eff >= cfg.min_upper_min)].assign(_eff=eff[on_day & (eff >= cfg.min_upper_min)])
    n0 = spells.loc[on_day, "device_id"].nunique()
    if cfg.single_place:
        n_places = cand.groupby("device_id")["place_id"].transform("nunique")
        cand = cand[n_places == 1]
    else:
        cand = cand.sort_values(["device_id", "_eff", "t_first_in"], ascending=[True, False, True], kind="mergesort")
        cand = cand.drop_duplicates("device_id", keep="first")
    report.add("single_place", n0, cand["device_id"].nunique())

    pre = list(calendar.pre_window)[-cfg.exclusion_pre_days:] if cfg.exclusion_pre_days else []
    post = list(calendar.post_window)[: cfg.exclusion_post_days]
    window_days = {d.isoformat() for d in pre + post}
    other = spells[spells["day"].isin(window_days)]
    present = other["upper_min"].isna() | (other["upper_min"] > cfg.exclusion_upper_min)
    other = other[present & other["device_id"].isin(cand["device_id"])]
    n_in = cand["device_id"].nunique()
    if cfg.strict_cross_place:
        bad = set(other["device_id"])
        cand = cand[~cand["device_id"].isin(bad)]
    else:
        seen = pd.MultiIndex.from_frame(other[["device_id", "place_id"]])
        key = pd.MultiIndex.from_frame(cand[["device_id", "place_id"]])
        cand = cand[~key.isin(seen)]
    report.add("exclusion_window", n_in, cand["device_id"].nunique())

    n_in = len(cand)
    if cfg.require_hull_ping:
        cand = cand[cand["hull_ping"].astype(bool)]
    report.add("hull_ping", n_in, len(cand))

    n_in = len(cand)
    masks_src = pings if isinstance(pings, HourMasks) else HourMasks(pings, np.unique(index.offset))
    place_pos = pd.Series(np.arange(len(index)), index=index.place_id)
    offs = index.offset[place_pos.loc[cand["place_id"]].to_numpy()] if len(cand) else np.zeros(0)
    masks = masks_src.lookup(cand["device_id"].to_numpy(), day_number(target), offs)
    cand = cand[has_consecutive_hours(masks, cfg.consistency_hours)]
    report.add("consistency", n_in, len(cand))

    n_in = len(cand)
    ok = cand["_eff"] <= cfg.max_upper_min
    if cfg.min_upper_floor is not None:
        ok &= cand["_eff"] >= cfg.min_upper_floor
    cand = cand[ok]
    report.add("reasonable_values", n_in, len(cand))

    cand = cand.drop(columns="_eff").sort_values(["device_id"], kind="mergesort").reset_index(drop=True)
    return cand, report


def placebo_sample(
    day: dt.date,
    spells: pd.DataFrame,
    pings,
    config: FilterConfig,
    calendar: StudyCalendar,
    index: PlaceIndex,
) -> tuple[pd.DataFrame, AttritionReport]:
    """The identical chain with every date anchor moved to ``day``."""
    return apply_filters(spells, pings, config, calendar.shifted(day), index)
