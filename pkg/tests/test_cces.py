import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pearson
from pollwait.cces import (
    BUCKETS,
    DONT_KNOW,
    SurveyResponse,
    attenuation_factor,
    correlate_regions,
    load_survey,
    recode,
    survey_region_means,
)
from pollwait.errors import InsufficientOverlap, SchemaMismatch, UnknownBucket


def test_recode_midpoints():
    assert recode("lt10") == 5
    assert recode("gt60") == 90
    assert recode("none") == 0
    assert [recode(b) for b in BUCKETS] == [0, 5, 20, 45, 90]
    with pytest.raises(UnknownBucket):
        recode("about an hour")
    with pytest.raises(UnknownBucket):
        SurveyResponse("r1", "S01", "forever")


def test_recode_order_preserving():
    vals = [recode(b) for b in BUCKETS]
    assert vals == sorted(vals)


def test_identical_vectors_correlate_to_one():
    a = {"A": 1.0, "B": 3.0, "C": 2.0}
    assert correlate_regions(a, a) == pytest.approx(1.0)


def test_three_region_closed_form():
    a = {"A": 1.0, "B": 2.0, "C": 4.0}
    b = {"A": 5.0, "B": 1.0, "C": 0.0, "D": 9.0}
    want = pearson([1, 2, 4], [5, 1, 0])
    assert correlate_regions(a, b) == pytest.approx(want, rel=1e-12)
    assert correlate_regions({"A": 1.0, "B": 2.0, "C": 3.0}, {"A": 3.0, "B": 2.0, "C": 1.0}) == pytest.approx(-1.0)


def test_insufficient_overlap():
    with pytest.raises(InsufficientOverlap):
        correlate_regions({"A": 1.0, "B": 2.0}, {"A": 1.0, "B": 2.0})
    with pytest.raises(InsufficientOverlap):
        correlate_regions({"A": 1.0, "B": 1.0, "C": 1.0}, {"A": 1.0, "B": 2.0, "C": 3.0})
    with pytest.raises(InsufficientOverlap):
        correlate_regions({"A": 1.0, "B": np.nan, "C": 2.0}, {"A": 1.0, "B": 2.0, "C": 3.0})


@given(
    st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=3, max_size=30),
    st.floats(0.1, 10), st.floats(-100, 100), st.floats(0.1, 10), st.floats(-100, 100),
)
def test_affine_invariance(pairs, a, b, c, d):
    x = {f"R{i}": p[0] for i, p in enumerate(pairs)}
    y = {f"R{i}": p[1] for i, p in enumerate(pairs)}
    xs, ys = list(x.values()), list(y.values())
    if np.std(xs) < 1e-3 or np.std(ys) < 1e-3:
        return
    r = correlate_regions(x, y)
    r2 = correlate_regions({k: a * v + b for k, v in x.items()}, {k: c * v + d for k, v in y.items()})
    assert r2 == pytest.approx(r, abs=1e-8)
    assert r == pytest.approx(pearson(xs, ys), abs=1e-9)


def test_survey_filters_and_means(tmp_path):
    p = tmp_path / "survey.csv"
    p.write_text(
        "respondent_id,region,bucket,in_person,election_day\n"
        "1,S01,lt10,1,1\n2,S01,b10to30,1,1\n3,S01,gt60,0,1\n4,S01,gt60,1,0\n"
        f"5,S01,{DONT_KNOW},1,1\n6,S02,none,1,1\n"
    )
    means = survey_region_means(load_survey(p)).set_index("region")
    assert means.loc["S01", "n"] == 2
    assert means.loc["S01", "mean"] == pytest.approx(12.5)
    assert means.loc["S02", "mean"] == 0.0
    bad = tmp_path / "bad.csv"
    bad.write_text("respondent_id,region,bucket\n1,S01,lt10\n")
    with pytest.raises(SchemaMismatch):
        load_survey(bad)
    bad.write_text("respondent_id,region,bucket,in_person,election_day\n1,S01,weird,1,1\n")
    with pytest.raises(UnknownBucket):
        load_survey(bad)


def test_attenuation_formula():
    assert attenuation_factor(1.0, 0.0) == 1.0
    assert attenuation_factor(1.0, 3.0) == pytest.approx(0.5)


def test_correlation_declines_with_noise_as_predicted():
    rng = np.random.default_rng(0)
    n = 4000
    signal = rng.normal(0, 2.0, n)
    pipe = {f"R{i}": s for i, s in enumerate(signal)}
    prev = 1.0
    for sigma in (0.5, 1.0, 2.0, 4.0):
        surv = {k: v + rng.normal(0, sigma) for k, v in pipe.items()}
        r = correlate_regions(pipe, surv)
        assert r == pytest.approx(attenuation_factor(4.0, sigma ** 2), abs=0.03)
        assert r < prev
        prev = r
