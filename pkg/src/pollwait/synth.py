"""Polling-place queue simulator emitting ping traces with known waits.

Every place runs its own multi-server FIFO queue on the target day. Voter
devices ping densely from shortly before arrival until shortly after
departure and sparsely from home the rest of the day. Background devices
(passersby, one-off visitors, recurring workers, residents and poll
workers) exercise the filter chain. Each place draws from its own seeded
substream, so output does not depend on the thread count.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import heapq
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import ConfigInvalid
from .geo import EARTH_RADIUS_M, Footprint, GeoPoint
from .ingest import BlockGroup, PollingPlace, StudyCalendar, write_blockgroups, write_places, write_pings

TRUTH_COLUMNS = ["device_id", "place_id", "day", "true_arrival", "true_departure", "true_wait_min", "role"]
ROLES = ("voter", "worker", "passerby", "resident", "visitor")

# state offsets cycle through the four contiguous-US standard offsets
_OFFSETS = (-5.0, -6.0, -7.0, -8.0)
# white, black, asian, hispanic, other
_RACE_BASE = np.array([0.70, 0.11, 0.05, 0.10, 0.04])


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_places: int = 500
    voters_per_place: float = 100.0
    volume_sigma: float = 0.5
    mean_registered_k: float = 2.0
    n_states: int = 8
    counties_per_state: int = 6
    districts_per_state: int = 3
    target_day: str = "2016-11-08"
    days_before: int = 7
    days_after: int = 7
    open_hour: int = 7
    close_hour: int = 20
    # comma-separated weights for open_hour .. close_hour-1; empty = default bimodal
    arrival_profile: str = ""
    service_median_min: float = 8.0
    service_sigma: float = 0.4
    utilization: float = 0.7
    servers: int = 0
    server_fb_cut: float = 0.0
    delta: float = 5.0
    extra_base_min: float = 0.0
    volume_effect: float = 0.0
    congestion_slope: float = 0.0
    county_confound: float = 0.0
    abandonment_rate: float = 0.0
    ping_median_s: float = 48.0
    ping_mode_s: float = 300.0
    ping_mode_weight: float = 0.05
    ping_sigma: float = 0.4
    gps_noise_m: float = 5.0
    queue_extent_m: float = 50.0
    offsite_min_m: float = 100.0
    offsite_max_m: float = 250.0
    lead_min: float = 5.0
    lead_max: float = 15.0
    compliance: float = 0.85
    passerby_rate: float = 1.0
    visitor_rate: float = 1.0
    visitor_median_min: float = 10.0
    worker_rate: float = 0.3
    resident_rate: float = 0.3
    poll_workers: int = 2
    contamination: float = 0.0
    android_share: float = 0.5
    survey_per_region: int = 200
    threads: int = 0

    def __post_init__(self):
        problems = []
        if self.n_places < 1:
            problems.append("n_places must be >= 1")
        if self.voters_per_place < 0:
            problems.append("voters_per_place must be >= 0")
        if not 0 <= self.open_hour < self.close_hour <= 24:
            problems.append("need 0 <= open_hour < close_hour <= 24")
        if not 0 <= self.ping_mode_weight < 0.5:
            problems.append("ping_mode_weight must be in [0, 0.5)")
        if self.ping_median_s <= 0 or self.ping_mode_s <= 0 or self.ping_sigma <= 0:
            problems.append("ping gap parameters must be positive")
        if self.service_median_min <= 0 or self.service_sigma < 0:
            problems.append("service distribution invalid")
        if not 0 < self.utilization < 1:
            problems.append("utilization must be in (0, 1)")
        if self.gps_noise_m < 0 or self.queue_extent_m <= 0:
            problems.append("gps_noise_m >= 0 and queue_extent_m > 0 required")
        if not self.queue_extent_m + 3 * self.gps_noise_m < self.offsite_min_m <= self.offsite_max_m:
            problems.append("off-site band must clear the queue area")
        if not 0 < self.lead_min <= self.lead_max:
            problems.append("need 0 < lead_min <= lead_max")
        for name in ("compliance", "android_share", "abandonment_rate", "server_fb_cut"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must be in [0, 1]")
        for name in ("passerby_rate", "visitor_rate", "worker_rate", "resident_rate", "contamination"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        try:
            dt.date.fromisoformat(self.target_day)
        except ValueError:
            problems.append(f"bad target_day {self.target_day!r}")
        if self.arrival_profile:
            try:
                w = [float(x) for x in self.arrival_profile.split(",")]
            except ValueError:
                w = []
            if len(w) != self.close_hour - self.open_hour or min(w, default=-1) < 0 or sum(w) <= 0:
                problems.append("arrival_profile needs one non-negative weight per open hour")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "ScenarioConfig":
        kinds = {f.name: type(f.default) for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in kinds:
                raise ConfigInvalid(f"unknown scenario key {k!r}")
            try:
                kw[k] = int(float(v)) if kinds[k] is int else kinds[k](v)
            except ValueError:
                raise ConfigInvalid(f"bad value for {k}: {v!r}") from None
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        vals = {}
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    k, _, v = line.partition("=")
                    vals[k.strip()] = v.strip()
        return cls.from_mapping(vals)

    def to_text(self) -> str:
        # threads never changes the output, so it is left out
        return "".join(
            f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self) if f.name != "threads"
        )

    @property
    def target(self) -> dt.date:
        return dt.date.fromisoformat(self.target_day)

    def calendar(self) -> StudyCalendar:
        states = [_state_code(s) for s in range(self.n_states)]
        return StudyCalendar.around(
            self.target,
            self.days_before,
            self.days_after,
            utc_offsets={s: _OFFSETS[i % 4] for i, s in enumerate(states)},
            open_hours={s: self.open_hour for s in states},
            close_hours={s: self.close_hour for s in states},
        )

    def days(self) -> list[dt.date]:
        return [self.target + dt.timedelta(days=k) for k in range(-self.days_before, self.days_after + 1)]

    def hour_weights(self) -> np.ndarray:
        n = self.close_hour - self.open_hour
        if self.arrival_profile:
            w = np.array([float(x) for x in self.arrival_profile.split(",")])
        else:
            # morning spike at opening, a lunch bump and an after-work peak
            h = np.arange(n)
            w = 1.0 + 0.15 * np.exp(-0.5 * ((h - (12 - self.open_hour)) / 1.0) ** 2)
            w += 0.35 * np.exp(-0.5 * ((h - (n - 3)) / 1.2) ** 2)
            w[0] = 2.0 * w[1:].max()
        return w / w.sum()


def gap_lognormal_median(cfg: ScenarioConfig) -> float:
    """Lognormal median that puts the mixture's overall median at ``ping_median_s``."""
    p = 1.0 - cfg.ping_mode_weight
    return cfg.ping_median_s * math.exp(-cfg.ping_sigma * norm.ppf(0.5 / p))


def draw_gaps(rng: np.random.Generator, cfg: ScenarioConfig, n: int, m: Optional[float] = None) -> np.ndarray:
    """Integer inter-ping gaps in seconds (>= 1)."""
    m = gap_lognormal_median(cfg) if m is None else m
    g = m * np.exp(cfg.ping_sigma * rng.standard_normal(n))
    g = np.where(rng.random(n) < cfg.ping_mode_weight, cfg.ping_mode_s, g)
    return np.maximum(1, np.rint(g)).astype(np.int64)


def ping_times(rng, cfg, start: float, end: float, m=None) -> np.ndarray:
    """Ping times covering ``[start, end]`` with a uniformly random phase."""
    if end < start:
        return np.zeros(0, np.int64)
    est = int((end - start) / max(1.0, 0.5 * cfg.ping_median_s)) + 8
    t0 = math.floor(start) - int(rng.integers(0, max(2, int(cfg.ping_median_s))))
    t = t0 + np.cumsum(draw_gaps(rng, cfg, est, m))
    while t[0] >= start:
        t = np.r_[t[0] - np.cumsum(draw_gaps(rng, cfg, 4, m))[::-1], t]
    while t[-1] <= end:
        t = np.r_[t, t[-1] + np.cumsum(draw_gaps(rng, cfg, est, m))]
    first = np.searchsorted(t, start, side="left")
    # keep one ping either side so the session is bracketed
    lo = max(first - 1, 0)
    hi = np.searchsorted(t, end, side="right") + 1
    return t[lo:hi]


def _state_code(i: int) -> str:
    return f"S{i + 1:02d}"


@dataclass
class SimOutput:
    config: ScenarioConfig
    pings: pd.DataFrame
    places: list[PollingPlace]
    blockgroups: dict[str, BlockGroup]
    truth: pd.DataFrame
    devices: pd.DataFrame
    survey: pd.DataFrame
    calendar: StudyCalendar = field(init=False)

    def __post_init__(self):
        self.calendar = self.config.calendar()

    def write(self, out_dir) -> dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            k: os.path.join(out_dir, f"{k}.csv")
            for k in ("pings", "places", "footprints", "blockgroups", "truth", "devices", "survey")
        }
        write_pings(self.pings, paths["pings"])
        write_places(self.places, paths["places"], paths["footprints"])
        write_blockgroups(self.blockgroups, paths["blockgroups"])
        self.truth.to_csv(paths["truth"], index=False, lineterminator="\n", float_format="%.3f")
        self.devices.to_csv(paths["devices"], index=False, lineterminator="\n")
        self.survey.to_csv(paths["survey"], index=False, lineterminator="\n")
        paths["scenario"] = os.path.join(out_dir, "scenario.txt")
        with open(paths["scenario"], "w") as fh:
            fh.write(self.config.to_text())
        return paths


# ---------------------------------------------------------------- layout


def _octagon(center: GeoPoint, radius_m: float) -> Footprint:
    # circumscribes a disc of ``radius_m``
    rr = radius_m / math.cos(math.pi / 8)
    ang = np.arange(8) * math.pi / 4 + math.pi / 8
    lat, lon = _to_latlon(center.lat, center.lon, rr * np.cos(ang), rr * np.sin(ang))
    return Footprint(tuple(GeoPoint(float(a), float(b)) for a, b in zip(lat, lon)))


def _to_latlon(lat0, lon0, east, north):
    lat = lat0 + np.degrees(np.asarray(north, float) / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(np.asarray(east, float) / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def _layout(cfg: ScenarioConfig, rng: np.random.Generator):
    """Places, block groups and per-place county composition."""
    n_cty = cfg.n_states * cfg.counties_per_state
    county_mix = rng.dirichlet(_RACE_BASE * 8.0, size=n_cty)
    places, bgs, cmeans = [], {}, []
    reg = cfg.mean_registered_k * np.exp(cfg.volume_sigma * rng.standard_normal(cfg.n_places) - cfg.volume_sigma**2 / 2)
    for i in range(cfg.n_places):
        c = i % n_cty
        s = c // cfg.counties_per_state
        cs = c % cfg.counties_per_state
        k = i // n_cty
        # states sit on a west-east line, counties 60 km apart, places 3 km apart
        lat0 = 34.0 + 0.6 * cs + 0.027 * (k // 20)
        lon0 = -80.0 - 4.0 * s - 0.033 * (k % 20)
        center = GeoPoint(round(lat0, 7), round(lon0, 7))
        mix = rng.dirichlet(county_mix[c] * 4.0 + 1e-3)
        mix = mix / mix.sum()
        bid = f"BG{i + 1:05d}"
        bgs[bid] = BlockGroup(
            bid,
            *[float(x) for x in mix],
            frac_poverty=float(rng.beta(2.0, 12.0)),
            population=float(np.round(rng.lognormal(np.log(1.4), 0.4), 4)),
            pop_density=float(np.round(rng.lognormal(np.log(2.0), 0.8), 4)),
        )
        places.append(
            PollingPlace(
                place_id=f"P{i + 1:05d}",
                centroid=center,
                state=_state_code(s),
                county=f"{_state_code(s)}-C{cs + 1:02d}",
                block_group=bid,
                footprint=_octagon(center, cfg.queue_extent_m + 5.0),
                registered_voters=float(np.round(reg[i], 4)),
                district=f"{_state_code(s)}-D{cs * cfg.districts_per_state // cfg.counties_per_state + 1}",
            )
        )
        cmeans.append(float(county_mix[c][1]))
    return places, bgs, np.array(cmeans)


# ---------------------------------------------------------------- per-place work


class _Emitter:
    """Collects pings and truth rows for one place."""

    def __init__(self, cfg, rng, place: PollingPlace, offset_h: float):
        self.cfg, self.rng, self.place = cfg, rng, place
        self.off = int(round(offset_h * 3600))
        self.lat0, self.lon0 = place.centroid.lat, place.centroid.lon
        self.sig = cfg.gps_noise_m / math.sqrt(2.0)
        self.gap_m = gap_lognormal_median(cfg)
        self.dev, self.t, self.e, self.n = [], [], [], []
        self.truth = []

    def utc(self, day: dt.date, local_s) -> np.ndarray:
        midnight = int(dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp())
        return midnight - self.off + np.asarray(local_s)

    def emit(self, device: str, t, east, north, noisy=True):
        t = np.asarray(t, np.int64)
        e = np.broadcast_to(np.asarray(east, float), t.shape).astype(float)
        nn = np.broadcast_to(np.asarray(north, float), t.shape).astype(float)
        if noisy and self.sig > 0:
            e = e + self.sig * self.rng.standard_normal(len(t))
            nn = nn + self.sig * self.rng.standard_normal(len(t))
        self.dev.append(np.full(len(t), device, dtype=object))
        self.t.append(t)
        self.e.append(e)
        self.n.append(nn)

    def ring_point(self, rmin, rmax):
        r = self.rng.uniform(rmin, rmax)
        a = self.rng.uniform(0, 2 * math.pi)
        return r * math.cos(a), r * math.sin(a)

    def disc_point(self, radius):
        r = radius * math.sqrt(self.rng.random())
        a = self.rng.uniform(0, 2 * math.pi)
        return r * math.cos(a), r * math.sin(a)

    def home_pings(self, device, day, first_hour, last_hour, home, skip=None):
        """One ping at a random minute of each local hour in ``[first_hour, last_hour)``."""
        hours = np.arange(first_hour, last_hour)
        local = hours * 3600 + self.rng.integers(0, 3600, len(hours))
        t = self.utc(day, local)
        if skip is not None:
            t = t[(t < skip[0]) | (t > skip[1])]
        self.emit(device, t, home[0], home[1])

    def visit(self, device, start, end, spot):
        """Dense pings around a stay at ``spot`` over ``[start, end]`` (epoch s)."""
        cfg = self.cfg
        lead = self.rng.uniform(cfg.lead_min, cfg.lead_max) * 60
        tail = self.rng.uniform(cfg.lead_min, cfg.lead_max) * 60
        t = ping_times(self.rng, cfg, start - lead, end + tail, self.gap_m)
        before = t < start
        after = t > end
        inside = ~before & ~after
        a = self.ring_point(cfg.offsite_min_m, cfg.offsite_max_m)
        b = self.ring_point(cfg.offsite_min_m, cfg.offsite_max_m)
        self.emit(device, t[before], a[0], a[1])
        self.emit(device, t[inside], spot[0], spot[1])
        self.emit(device, t[after], b[0], b[1])
        return float(start - lead), float(end + tail)

    def frame(self) -> pd.DataFrame:
        if not self.t:
            return pd.DataFrame({"device_id": [], "t": np.zeros(0, np.int64), "lat": [], "lon": []})
        lat, lon = _to_latlon(self.lat0, self.lon0, np.concatenate(self.e), np.concatenate(self.n))
        return pd.DataFrame(
            {
                "device_id": np.concatenate(self.dev),
                "t": np.concatenate(self.t),
                "lat": np.round(lat, 7),
                "lon": np.round(lon, 7),
            }
        )


def _queue(rng, cfg: ScenarioConfig, arrivals: np.ndarray, servers: int) -> tuple[np.ndarray, np.ndarray]:
    """FIFO multi-server queue; returns service start and end (seconds) per arrival."""
    svc = cfg.service_median_min * 60 * np.exp(cfg.service_sigma * rng.standard_normal(len(arrivals)))
    free = [0.0] * servers
    heapq.heapify(free)
    start = np.empty(len(arrivals))
    for i, a in enumerate(arrivals):
        f = heapq.heappop(free)
        start[i] = max(a, f)
        heapq.heappush(free, start[i] + svc[i])
    return start, start + svc


def _servers(cfg, n_voters, fb, weights) -> int:
    if cfg.servers > 0:
        base = cfg.servers
    else:
        peak_per_s = n_voters * weights.max() / 3600.0
        mean_svc = cfg.service_median_min * 60 * math.exp(cfg.service_sigma**2 / 2)
        base = max(1, math.ceil(peak_per_s * mean_svc / cfg.utilization))
    return max(1, int(round(base * (1 - cfg.server_fb_cut * fb))))


def _simulate_place(cfg: ScenarioConfig, seed: np.random.SeedSequence, i: int, place, bg, n_voters: int,
                    n_contam: int, offset_h: float, county_fb: float):
    rng = np.random.default_rng(seed)
    em = _Emitter(cfg, rng, place, offset_h)
    target = cfg.target
    days = cfg.days()
    weights = cfg.hour_weights()
    tag = f"{i + 1:05d}"
    android = []

    def new_device(prefix, k):
        d = f"{prefix}{tag}-{k:05d}"
        android.append((d, int(rng.random() < cfg.android_share)))
        return d

    def home_span(compliant):
        if compliant:
            first = int(rng.integers(5, 9))
            return first, int(rng.integers(first + 13, 25))
        first = int(rng.integers(6, 12))
        return first, first + int(rng.integers(3, 10))

    # voters
    hrs = rng.choice(len(weights), size=n_voters, p=weights) + cfg.open_hour
    local_arr = np.sort(hrs * 3600 + rng.random(n_voters) * 3600)
    start, end = _queue(rng, cfg, local_arr, _servers(cfg, n_voters, bg.frac_black, weights))
    v = place.registered_voters or 0.0
    extra = (
        cfg.extra_base_min
        + (cfg.delta + cfg.congestion_slope * v) * bg.frac_black
        + cfg.volume_effect * v
        + cfg.county_confound * county_fb
    ) * 60
    local_dep = end + max(extra, 0.0)
    if cfg.abandonment_rate > 0:
        quit_ = rng.random(n_voters) < cfg.abandonment_rate
        patience = local_arr + rng.uniform(60, 300, n_voters)
        local_dep = np.where(quit_, np.minimum(local_dep, patience), local_dep)
    arr_utc = em.utc(target, local_arr)
    dep_utc = em.utc(target, local_dep)
    for k in range(n_voters):
        d = new_device("V", k)
        spot = em.disc_point(cfg.queue_extent_m)
        s0, s1 = em.visit(d, arr_utc[k], dep_utc[k], spot)
        home = em.ring_point(400, 1200)
        em.home_pings(d, target, *home_span(rng.random() < cfg.compliance), home, skip=(s0, s1))
        em.truth.append((d, place.place_id, target.isoformat(), arr_utc[k], dep_utc[k],
                         (dep_utc[k] - arr_utc[k]) / 60.0, "voter"))

    # one-off visitors (plus election-day contamination, same behaviour)
    visits = [(day, "S") for day in days for _ in range(rng.poisson(cfg.visitor_rate))]
    visits += [(target, "C")] * n_contam
    for k, (day, prefix) in enumerate(visits):
        d = new_device(prefix, k)
        arr = em.utc(day, rng.uniform(8, 19) * 3600)
        dep = arr + 60 * cfg.visitor_median_min * math.exp(0.6 * rng.standard_normal())
        s0, s1 = em.visit(d, arr, dep, em.disc_point(cfg.queue_extent_m))
        em.home_pings(d, day, *home_span(rng.random() < cfg.compliance), em.ring_point(400, 1200), skip=(s0, s1))
        em.truth.append((d, place.place_id, day.isoformat(), arr, dep, (dep - arr) / 60.0, "visitor"))

    # passersby: a single straight walk past the place
    for k, day in enumerate(day for day in days for _ in range(rng.poisson(cfg.passerby_rate))):
        d = new_device("T", k)
        t_mid = em.utc(day, rng.uniform(7, 21) * 3600)
        t = ping_times(rng, cfg, t_mid - 300, t_mid + 300, em.gap_m)
        off = rng.uniform(0, 200)
        ang = rng.uniform(0, 2 * math.pi)
        along = 1.4 * (t - t_mid)
        em.emit(d, t, along * math.cos(ang) - off * math.sin(ang), along * math.sin(ang) + off * math.cos(ang))
        em.home_pings(d, day, *home_span(rng.random() < cfg.compliance), em.ring_point(600, 1200),
                      skip=(t[0], t[-1]))
        em.truth.append((d, place.place_id, day.isoformat(), np.nan, np.nan, np.nan, "passerby"))

    # staff with a weekday routine at the site
    for k in range(rng.poisson(cfg.worker_rate)):
        d = new_device("W", k)
        spot = em.disc_point(cfg.queue_extent_m)
        home = em.ring_point(600, 1200)
        for day in days:
            if day.weekday() < 5:
                t = em.utc(day, np.arange(8 * 3600, 16 * 3600, 1200) + rng.integers(0, 1200, 24))
                em.emit(d, t, *spot)
                em.home_pings(d, day, 6, 8, home)
                em.home_pings(d, day, 17, 22, home)
            else:
                em.home_pings(d, day, 9, 21, home)
        em.truth.append((d, place.place_id, "", np.nan, np.nan, np.nan, "worker"))

    # residents living inside the geofence
    for k in range(rng.poisson(cfg.resident_rate)):
        d = new_device("R", k)
        spot = em.disc_point(cfg.queue_extent_m - 10)
        for day in days:
            em.emit(d, em.utc(day, np.arange(24) * 3600 + rng.integers(0, 3600, 24)), *spot)
        em.truth.append((d, place.place_id, "", np.nan, np.nan, np.nan, "resident"))

    # poll workers on site all election day
    for k in range(cfg.poll_workers):
        d = new_device("E", k)
        lo, hi = (cfg.open_hour - 1) * 3600, min(cfg.close_hour + 1, 24) * 3600 - 1
        t = em.utc(target, np.arange(lo, hi, 600) + rng.integers(0, 600, len(range(lo, hi, 600))))
        em.emit(d, t, *em.disc_point(cfg.queue_extent_m - 10))
        em.truth.append((d, place.place_id, target.isoformat(), float(em.utc(target, lo)),
                         float(em.utc(target, hi)), (hi - lo) / 60.0, "worker"))

    return em.frame(), em.truth, android


def _survey(cfg, rng, truth: pd.DataFrame, places) -> pd.DataFrame:
    """Bucketed self-reports from a sample of voters in each state."""
    state_of = {p.place_id: p.state for p in places}
    v = truth[truth["role"] == "voter"]
    rows = []
    for state, g in v.groupby(v["place_id"].map(state_of), sort=True):
        take = rng.choice(len(g), size=min(cfg.survey_per_region, len(g)), replace=False)
        w = g["true_wait_min"].to_numpy()[np.sort(take)] * np.exp(0.3 * rng.standard_normal(len(take)))
        b = np.select([w < 1, w < 10, w <= 30, w <= 60], ["none", "lt10", "b10to30", "b31to60"], "gt60")
        b = np.where(rng.random(len(take)) < 0.05, "dont_know", b)
        for j, bucket in enumerate(b):
            rows.append((f"R-{state}-{j:05d}", state, bucket, 1, 1))
    return pd.DataFrame(rows, columns=["respondent_id", "region", "bucket", "in_person", "election_day"])


def simulate(cfg: ScenarioConfig, threads: Optional[int] = None) -> SimOutput:
    root = np.random.SeedSequence(cfg.seed)
    layout_seq, alloc_seq, survey_seq, place_root = root.spawn(4)
    places, bgs, county_fb = _layout(cfg, np.random.default_rng(layout_seq))
    reg = np.array([p.registered_voters for p in places])
    total = int(round(cfg.voters_per_place * cfg.n_places))
    counts = np.random.default_rng(alloc_seq).multinomial(total, reg / reg.sum())
    contam = np.floor(cfg.contamination * counts + 0.5).astype(int)
    cal = cfg.calendar()
    seqs = place_root.spawn(cfg.n_places)

    def work(i):
        p = places[i]
        return _simulate_place(cfg, seqs[i], i, p, bgs[p.block_group], int(counts[i]), int(contam[i]),
                               cal.offset(p.state), county_fb[i])

    n_threads = threads if threads is not None else cfg.threads
    n_threads = n_threads or (os.cpu_count() or 1)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            results = list(ex.map(work, range(cfg.n_places)))
    else:
        results = [work(i) for i in range(cfg.n_places)]

    pings = pd.concat([r[0] for r in results], ignore_index=True)
    pings = pings.sort_values(["device_id", "t"], kind="mergesort").reset_index(drop=True)
    truth = pd.DataFrame([row for r in results for row in r[1]], columns=TRUTH_COLUMNS)
    devices = pd.DataFrame([row for r in results for row in r[2]], columns=["device_id", "android"])
    survey = _survey(cfg, np.random.default_rng(survey_seq), truth, places)
    return SimOutput(cfg, pings, places, bgs, truth, devices, survey)


def truth_join(spells: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    """Inner join of spells with ground truth on device, place and day."""
    t = truth[truth["day"] != ""]
    return spells.merge(t, on=["device_id", "place_id", "day"], how="inner", sort=False)
