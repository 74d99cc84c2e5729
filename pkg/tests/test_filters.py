import datetime as dt
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pollwait.filters import (
    REASONABLE_VALUES,
    STAGES,
    FilterConfig,
    HourMasks,
    apply_filters,
    has_consecutive_hours,
    placebo_sample,
)
from pollwait.geo import GeoPoint, offset_point
from pollwait.ingest import PollingPlace, StudyCalendar
from pollwait.spells import PlaceIndex, extract_spells

TARGET = dt.date(2016, 11, 8)
CAL = StudyCalendar.around(TARGET)
CENTER = GeoPoint(39.0, -77.0)
FAR = offset_point(CENTER, 2000, 0)
DAY0 = 1478563200  # 2016-11-08 00:00 UTC


def _index():
    return PlaceIndex([PollingPlace("P1", CENTER, "S", "C", "B", None, 1.0)], CAL)


def _device(dev, day_offset=0, start_h=6, hours=14, visit=(9, 10, 20)):
    """Hourly background pings plus one visit (hour, minute_in, minutes_inside)."""
    base = DAY0 + day_offset * 86400
    rows = [(dev, base + h * 3600 + 1800, FAR.lat, FAR.lon) for h in range(start_h, start_h + hours)]
    if visit is not None:
        h, m, dur = visit
        t_in = base + h * 3600 + m * 60
        rows = [r for r in rows if not t_in - 180 <= r[1] <= t_in + dur * 60 + 180]
        rows += [(dev, t_in - 120, FAR.lat, FAR.lon)]
        rows += [(dev, t_in + k * 60, CENTER.lat, CENTER.lon) for k in range(0, dur + 1, 5)]
        rows += [(dev, t_in + dur * 60 + 120, FAR.lat, FAR.lon)]
    return rows


def _run(rows, cfg=FilterConfig()):
    pings = pd.DataFrame(sorted(rows, key=lambda r: (r[0], r[1])), columns=["device_id", "t", "lat", "lon"])
    sp = extract_spells(pings, _index(), 60.0)
    return apply_filters(sp, pings, cfg, CAL, _index())


def test_clean_voter_survives():
    surv, rep = _run(_device("V"))
    assert list(surv["device_id"]) == ["V"]
    assert [s[0] for s in rep.stages] == list(STAGES)


def test_prior_dwell_at_same_place_excluded():
    rows = _device("V") + _device("V", day_offset=-2, visit=(12, 0, 5))
    surv, rep = _run(rows)
    assert surv.empty
    assert rep.to_frame().set_index("stage").loc["exclusion_window", "devices_out"] == 0


def test_six_distinct_hours_fail_consistency():
    surv, rep = _run(_device("V", hours=6))
    assert surv.empty
    st_ = rep.to_frame().set_index("stage")
    assert st_.loc["hull_ping", "devices_out"] == 1 and st_.loc["consistency", "devices_out"] == 0


def test_reasonable_values_bounds():
    assert _run(_device("V", visit=(9, 0, 130)))[0].empty
    assert not _run(_device("V", visit=(9, 0, 20)), FilterConfig.reasonable_values("RV7"))[0].empty
    assert _run(_device("V", visit=(9, 0, 70)), FilterConfig.reasonable_values("RV7"))[0].empty
    assert REASONABLE_VALUES["RV10"] == (60.0, 4.0)


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(min_upper_min=5, max_upper_min=5)
    with pytest.raises(ValueError):
        FilterConfig(consistency_hours=0)


def test_has_consecutive_hours():
    full = (1 << 12) - 1
    assert has_consecutive_hours([full], 12).tolist() == [True]
    assert has_consecutive_hours([full >> 1], 12).tolist() == [False]
    assert has_consecutive_hours([0b101010101010101010101], 2).tolist() == [False]


@given(st.sets(st.integers(0, 23)), st.integers(1, 24))
def test_consecutive_hours_matches_scan(hours, k):
    mask = sum(1 << h for h in hours)
    want = any(all(h + j in hours for j in range(k)) for h in range(0, 25 - k))
    assert bool(has_consecutive_hours([mask], k)[0]) == want


# brute-force predicate oracle


def _oracle(spells, pings, index, cfg, calendar):
    offset = dict(zip(index.place_id, index.offset))
    kept = {}
    for r in spells.to_dict("records"):
        key = (r["device_id"], r["place_id"], r["day"])
        up = math.inf if np.isnan(r["upper_min"]) else r["upper_min"]
        cur = kept.get(key)
        if cur is None:
            kept[key] = (up, r)
        else:
            cu = cur[0]
            if up > cu or (up == cu and r["t_first_in"] < cur[1]["t_first_in"]):
                kept[key] = (up, r)
    target = calendar.target_day.isoformat()
    window = {d.isoformat() for d in calendar.pre_window + calendar.post_window}
    by_dev = {}
    for (dev, pid, day), (_, r) in kept.items():
        by_dev.setdefault(dev, []).append(r)
    ping_t = {}
    for dev, t in zip(pings["device_id"], pings["t"]):
        ping_t.setdefault(dev, []).append(int(t))
    out = set()
    for dev, rs in by_dev.items():
        today = [r for r in rs if r["day"] == target and not np.isnan(r["upper_min"]) and r["upper_min"] >= cfg.min_upper_min]
        if len({r["place_id"] for r in today}) != 1:
            continue
        s = today[0]
        p = s["place_id"]
        seen = any(
            r["day"] in window and r["place_id"] == p and (np.isnan(r["upper_min"]) or r["upper_min"] > 1.0) for r in rs
        )
        if seen or not s["hull_ping"]:
            continue
        off = offset[p]
        hrs = set()
        for t in ping_t[dev]:
            local = t + off * 3600
            if dt.date(1970, 1, 1) + dt.timedelta(days=local // 86400) == calendar.target_day:
                hrs.add(int((local % 86400) // 3600))
        if not any(all(h + j in hrs for j in range(cfg.consistency_hours)) for h in range(25 - cfg.consistency_hours)):
            continue
        if s["upper_min"] > cfg.max_upper_min or (cfg.min_upper_floor is not None and s["upper_min"] < cfg.min_upper_floor):
            continue
        out.add((dev, p))
    return out


@pytest.mark.parametrize("cfg", [FilterConfig(), FilterConfig.reasonable_values("RV9")])
def test_survivors_equal_bruteforce_predicates(small_run, cfg):
    inputs, core = small_run
    sub = core.spells
    devs = sorted(sub["device_id"].unique())[::3]
    sub = sub[sub["device_id"].isin(devs)]
    pings = inputs.pings.frame[inputs.pings.frame["device_id"].isin(devs)]
    surv, rep = apply_filters(sub, pings, cfg, inputs.calendar, inputs.index)
    want = _oracle(sub, pings, inputs.index, cfg, inputs.calendar)
    assert set(zip(surv["device_id"], surv["place_id"])) == want
    assert len(want) > 10


def test_attrition_composes_and_is_monotone(small_run):
    _, core = small_run
    a = core.attrition
    assert (a["devices_out"] <= a["devices_in"]).all()
    assert (a["devices_in"].to_numpy()[1:] == a["devices_out"].to_numpy()[:-1]).all()
    assert a["devices_out"].iloc[-1] == len(core.survivors)


def test_strict_variant_is_subset(small_run):
    inputs, core = small_run
    strict, _ = apply_filters(core.spells, inputs.masks, FilterConfig(strict_cross_place=True), inputs.calendar, inputs.index)
    assert set(strict["device_id"]) <= set(core.survivors["device_id"])


def test_dropping_a_stage_never_shrinks_survivors(small_run):
    inputs, core = small_run
    loose, _ = apply_filters(core.spells, inputs.masks, FilterConfig(require_hull_ping=False), inputs.calendar, inputs.index)
    assert set(core.survivors["device_id"]) <= set(loose["device_id"])


def test_hour_masks_match_raw_pings(small_run):
    inputs, core = small_run
    pings = inputs.pings.frame
    masks = HourMasks(pings, [-5.0])
    dev = pings["device_id"].iloc[0]
    day = int((DAY0 - 5 * 3600) // 86400) + 1
    got = masks.lookup([dev], day, [-5.0])[0]
    t = pings.loc[pings["device_id"] == dev, "t"].to_numpy() - 5 * 3600
    hrs = {int((x % 86400) // 3600) for x in t if x // 86400 == day}
    assert got == sum(1 << h for h in hrs)


def test_target_day_placebo_equals_apply(small_run):
    inputs, core = small_run
    same, _ = placebo_sample(inputs.calendar.target_day, core.spells, inputs.masks, FilterConfig(), inputs.calendar, inputs.index)
    pd.testing.assert_frame_equal(same, core.survivors)


def test_placebo_quiet_without_background():
    from pollwait import pipeline as pp
    from pollwait.synth import ScenarioConfig, simulate

    cfg = ScenarioConfig(seed=3, n_places=20, voters_per_place=30, passerby_rate=0, visitor_rate=0,
                         worker_rate=0, resident_rate=0, poll_workers=0)
    inputs = pp.from_simulation(simulate(cfg, threads=1))
    core = pp.run_core(inputs, 60.0, FilterConfig())
    assert len(core.survivors) > 100
    for d in inputs.calendar.pre_window[-3:]:
        s, _ = placebo_sample(d, core.spells, inputs.masks, FilterConfig(), inputs.calendar, inputs.index)
        assert len(s) == 0


def test_precision_against_simulator_labels(small_sim, small_run):
    from pollwait.synth import truth_join

    _, core = small_run
    j = truth_join(core.survivors, small_sim.truth)
    assert len(j) == len(core.survivors)
    assert (j["role"] == "voter").mean() >= 0.87
