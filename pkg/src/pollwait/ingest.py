"""CSV loaders and writers for pings, polling places, block groups and devices.

Malformed rows are skipped and counted; duplicate keys, broken joins and
demographic rows that violate their invariants are fatal.
"""

from __future__ import annotations

import datetime as dt
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import DuplicateKey, EmptyInput, InvariantViolation, JoinError, SchemaMismatch
from .geo import DegenerateGeometry, Footprint, GeoPoint, convex_hull

log = logging.getLogger(__name__)

PING_COLUMNS = ["device_id", "timestamp_utc", "lat", "lon"]
PLACE_COLUMNS = ["place_id", "lat", "lon", "state", "county", "block_group", "registered_voters"]
FOOTPRINT_COLUMNS = ["place_id", "vertex_index", "lat", "lon"]
BLOCKGROUP_COLUMNS = [
    "block_group",
    "frac_white",
    "frac_black",
    "frac_asian",
    "frac_hispanic",
    "frac_other",
    "frac_poverty",
    "population_k",
    "pop_density_k",
]
RACE_FIELDS = ["frac_white", "frac_black", "frac_asian", "frac_hispanic", "frac_other"]
DEVICE_COLUMNS = ["device_id", "android"]


@dataclass(frozen=True)
class LoadReport:
    rows_in: int
    rows_loaded: int
    rows_skipped: int

    def __post_init__(self):
        assert self.rows_in == self.rows_loaded + self.rows_skipped


@dataclass(frozen=True)
class PingRecord:
    device_id: str
    t: int
    loc: GeoPoint


@dataclass
class PingTable:
    """Pings sorted by (device_id, t); ``t`` is integer epoch seconds (UTC)."""

    frame: pd.DataFrame
    report: LoadReport

    def __len__(self):
        return len(self.frame)

    def records(self) -> Iterator[PingRecord]:
        f = self.frame
        for d, t, la, lo in zip(f["device_id"], f["t"], f["lat"], f["lon"]):
            yield PingRecord(d, int(t), GeoPoint(float(la), float(lo)))


@dataclass(frozen=True)
class PollingPlace:
    place_id: str
    centroid: GeoPoint
    state: str
    county: str
    block_group: str
    footprint: Optional[Footprint] = None
    registered_voters: Optional[float] = None
    district: Optional[str] = None


@dataclass(frozen=True)
class BlockGroup:
    id: str
    frac_white: float
    frac_black: float
    frac_asian: float
    frac_hispanic: float
    frac_other: float
    frac_poverty: float
    population: float
    pop_density: float

    def __post_init__(self):
        fracs = [self.frac_white, self.frac_black, self.frac_asian, self.frac_hispanic, self.frac_other]
        if any(not 0.0 <= f <= 1.0 for f in fracs + [self.frac_poverty]):
            raise InvariantViolation(f"block group {self.id}: fraction outside [0, 1]")
        if not 0.99 <= sum(fracs) <= 1.01:
            raise InvariantViolation(f"block group {self.id}: race fractions sum to {sum(fracs):.3f}")
        if self.population < 0:
            raise InvariantViolation(f"block group {self.id}: negative population")


@dataclass(frozen=True)
class JoinReport:
    matched: int
    unmatched: tuple[str, ...]

    @property
    def n_unmatched(self) -> int:
        return len(self.unmatched)


@dataclass(frozen=True)
class StudyCalendar:
    """Target day, exclusion windows and per-state clock conventions.

    ``utc_offsets`` maps state code to a fixed offset in hours (local = UTC + offset).
    """

    target_day: dt.date
    pre_window: tuple[dt.date, ...]
    post_window: tuple[dt.date, ...]
    utc_offsets: Mapping[str, float] = field(default_factory=dict)
    open_hours: Mapping[str, int] = field(default_factory=dict)
    close_hours: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.target_day in self.pre_window or self.target_day in self.post_window:
            raise ValueError("target day must not fall in an exclusion window")

    @classmethod
    def around(cls, target_day: dt.date, days_before: int = 7, days_after: int = 7, **kw) -> "StudyCalendar":
        pre = tuple(target_day - dt.timedelta(days=k) for k in range(days_before, 0, -1))
        post = tuple(target_day + dt.timedelta(days=k) for k in range(1, days_after + 1))
        return cls(target_day, pre, post, **kw)

    def shifted(self, day: dt.date) -> "StudyCalendar":
        """Same calendar with every date anchor moved to ``day``."""
        return StudyCalendar.around(
            day,
            len(self.pre_window),
            len(self.post_window),
            utc_offsets=self.utc_offsets,
            open_hours=self.open_hours,
            close_hours=self.close_hours,
        )

    def offset(self, state: str) -> float:
        return float(self.utc_offsets.get(state, 0.0))


def _check_header(df: pd.DataFrame, required, path) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}")


def _read(path, required) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if os.path.getsize(path) == 0:
        raise EmptyInput(f"{path}: empty file (no header)")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    _check_header(df, required, path)
    return df


def _num(s: pd.Series) -> pd.Series:
    return pd.to_numeric(s.str.strip(), errors="coerce")


def parse_timestamps(s: pd.Series) -> pd.Series:
    """Epoch seconds (int64, NaN-able float) from epoch strings or ISO-8601."""
    s = s.str.strip()
    out = pd.to_numeric(s, errors="coerce")
    iso = out.isna() & (s != "")
    if iso.any():
        parsed = pd.to_datetime(s[iso], utc=True, errors="coerce", format="ISO8601")
        secs = (parsed - pd.Timestamp(0, tz="UTC")).dt.total_seconds()
        out = out.astype(float)
        out[iso] = secs
    return out


def load_pings(path, window: Optional[tuple[int, int]] = None) -> PingTable:
    """Load ``pings.csv``.

    Rows with unparseable fields, invalid coordinates, empty device ids or
    (when ``window`` is given) timestamps outside ``[start, end)`` are skipped.
    """
    raw = _read(path, PING_COLUMNS)
    n_in = len(raw)
    t = parse_timestamps(raw["timestamp_utc"])
    lat = _num(raw["lat"])
    lon = _num(raw["lon"])
    dev = raw["device_id"].str.strip()
    ok = (
        (dev != "")
        & t.notna()
        & lat.between(-90, 90)
        & lon.between(-180, 180)
    )
    t = np.floor(t.astype(float))
    ok &= np.isfinite(t)
    if window is not None:
        ok &= (t >= window[0]) & (t < window[1])
    frame = pd.DataFrame(
        {
            "device_id": dev[ok].to_numpy(dtype=object),
            "t": t[ok].to_numpy(dtype=np.int64) if ok.any() else np.zeros(0, np.int64),
            "lat": lat[ok].to_numpy(dtype=float),
            "lon": lon[ok].to_numpy(dtype=float),
        }
    )
    frame = sort_pings(frame)
    skipped = n_in - len(frame)
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    return PingTable(frame, LoadReport(n_in, len(frame), skipped))


def sort_pings(frame: pd.DataFrame) -> pd.DataFrame:
    if len(frame) and not _is_sorted(frame):
        frame = frame.sort_values(["device_id", "t"], kind="mergesort")
    return frame.reset_index(drop=True)


def _is_sorted(frame: pd.DataFrame) -> bool:
    d = frame["device_id"].to_numpy()
    t = frame["t"].to_numpy()
    if len(d) < 2:
        return True
    same = d[1:] == d[:-1]
    return bool(np.all((d[1:] > d[:-1]) | (same & (t[1:] >= t[:-1]))))


def write_pings(frame: pd.DataFrame, path) -> None:
    out = pd.DataFrame(
        {"device_id": frame["device_id"], "timestamp_utc": frame["t"], "lat": frame["lat"], "lon": frame["lon"]}
    )
    out.to_csv(path, index=False, lineterminator="\n")


def load_blockgroups(path) -> dict[str, BlockGroup]:
    raw = _read(path, BLOCKGROUP_COLUMNS)
    out: dict[str, BlockGroup] = {}
    skipped = 0
    for row in raw.itertuples(index=False):
        r = row._asdict()
        try:
            vals = [float(r[c]) for c in BLOCKGROUP_COLUMNS[1:]]
        except ValueError:
            skipped += 1
            continue
        if not all(np.isfinite(vals)) or not r["block_group"].strip():
            skipped += 1
            continue
        bid = r["block_group"].strip()
        if bid in out:
            raise DuplicateKey(f"duplicate block_group {bid}")
        out[bid] = BlockGroup(bid, *vals)
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    return out


def load_footprints(path) -> dict[str, Footprint]:
    raw = _read(path, FOOTPRINT_COLUMNS)
    raw = raw.assign(_i=_num(raw["vertex_index"]), _lat=_num(raw["lat"]), _lon=_num(raw["lon"]))
    raw = raw.dropna(subset=["_i", "_lat", "_lon"])
    out = {}
    for pid, g in raw.groupby("place_id", sort=True):
        g = g.sort_values("_i")
        pts = [GeoPoint(a, b) for a, b in zip(g["_lat"], g["_lon"])]
        try:
            out[pid] = convex_hull(pts)
        except DegenerateGeometry:
            log.warning("footprint for %s is degenerate; ignored", pid)
    return out


def load_places(
    path,
    footprints_path=None,
    blockgroups: Optional[Mapping[str, BlockGroup]] = None,
) -> list[PollingPlace]:
    """Load ``places.csv`` (plus optional ``footprints.csv``).

    When ``blockgroups`` is given every place must resolve, else JoinError.
    """
    raw = _read(path, PLACE_COLUMNS)
    fps = load_footprints(footprints_path) if footprints_path and os.path.exists(footprints_path) else {}
    lat = _num(raw["lat"])
    lon = _num(raw["lon"])
    reg = _num(raw["registered_voters"])
    places = []
    seen = set()
    skipped = 0
    has_district = "district" in raw.columns
    for i, row in enumerate(raw.itertuples(index=False)):
        pid = row.place_id.strip()
        if not pid or not (-90 <= lat[i] <= 90) or not (-180 <= lon[i] <= 180):
            skipped += 1
            continue
        if pid in seen:
            raise DuplicateKey(f"duplicate place_id {pid}")
        seen.add(pid)
        places.append(
            PollingPlace(
                place_id=pid,
                centroid=GeoPoint(float(lat[i]), float(lon[i])),
                state=row.state.strip(),
                county=row.county.strip(),
                block_group=row.block_group.strip(),
                footprint=fps.get(pid),
                registered_voters=None if np.isnan(reg[i]) else float(reg[i]),
                district=(row.district.strip() or None) if has_district else None,
            )
        )
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    _check_nesting(places)
    if blockgroups is not None:
        rep = validate_join(places, blockgroups)
        if rep.unmatched:
            raise JoinError(rep.unmatched)
    return places


def _check_nesting(places) -> None:
    owner: dict[str, str] = {}
    for p in places:
        if owner.setdefault(p.county, p.state) != p.state:
            raise InvariantViolation(f"county {p.county} appears in states {owner[p.county]} and {p.state}")


def validate_join(places, blockgroups: Mapping[str, BlockGroup]) -> JoinReport:
    unmatched = tuple(sorted(p.place_id for p in places if p.block_group not in blockgroups))
    return JoinReport(len(places) - len(unmatched), unmatched)


def places_frame(places) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "place_id": [p.place_id for p in places],
            "lat": [p.centroid.lat for p in places],
            "lon": [p.centroid.lon for p in places],
            "state": [p.state for p in places],
            "county": [p.county for p in places],
            "district": [p.district for p in places],
            "block_group": [p.block_group for p in places],
            "registered_voters": [np.nan if p.registered_voters is None else p.registered_voters for p in places],
        }
    )


def blockgroups_frame(bgs: Mapping[str, BlockGroup]) -> pd.DataFrame:
    rows = [
        (b.id, b.frac_white, b.frac_black, b.frac_asian, b.frac_hispanic, b.frac_other,
         b.frac_poverty, b.population, b.pop_density)
        for b in bgs.values()
    ]
    return pd.DataFrame(rows, columns=BLOCKGROUP_COLUMNS)


def write_places(places, path, footprints_path=None) -> None:
    df = places_frame(places)
    cols = PLACE_COLUMNS + (["district"] if df["district"].notna().any() else [])
    df[cols].to_csv(path, index=False, lineterminator="\n")
    if footprints_path is not None:
        rows = [
            (p.place_id, i, v.lat, v.lon)
            for p in places
            if p.footprint is not None
            for i, v in enumerate(p.footprint.vertices)
        ]
        pd.DataFrame(rows, columns=FOOTPRINT_COLUMNS).to_csv(footprints_path, index=False, lineterminator="\n")


def write_blockgroups(bgs: Mapping[str, BlockGroup], path) -> None:
    blockgroups_frame(bgs).to_csv(path, index=False, lineterminator="\n")


def load_devices(path) -> pd.DataFrame:
    """Optional ``devices.csv`` (device_id, android 0/1)."""
    raw = _read(path, DEVICE_COLUMNS)
    android = _num(raw["android"])
    ok = android.isin([0, 1]) & (raw["device_id"].str.strip() != "")
    return pd.DataFrame({"device_id": raw["device_id"][ok].str.strip(), "android": android[ok].astype(int)})


def with_footprint(place: PollingPlace, fp: Optional[Footprint]) -> PollingPlace:
    return replace(place, footprint=fp)
