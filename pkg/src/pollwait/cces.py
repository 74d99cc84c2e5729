"""Survey wait-time buckets and region-level agreement with pipeline estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import InsufficientOverlap, SchemaMismatch, UnknownBucket

BUCKET_MINUTES = {"none": 0.0, "lt10": 5.0, "b10to30": 20.0, "b31to60": 45.0, "gt60": 90.0}
BUCKETS = tuple(BUCKET_MINUTES)
DONT_KNOW = "dont_know"
SURVEY_COLUMNS = ["respondent_id", "region", "bucket", "in_person", "election_day"]


@dataclass(frozen=True)
class SurveyResponse:
    respondent_id: str
    region: str
    bucket: str
    in_person: bool = True
    election_day: bool = True

    def __post_init__(self):
        if self.bucket not in BUCKET_MINUTES and self.bucket != DONT_KNOW:
            raise UnknownBucket(self.bucket)


def recode(bucket: str) -> float:
    try:
        return BUCKET_MINUTES[bucket]
    except KeyError:
        raise UnknownBucket(bucket) from None


def load_survey(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in SURVEY_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}")
    bad = ~df["bucket"].isin(list(BUCKET_MINUTES) + [DONT_KNOW])
    if bad.any():
        raise UnknownBucket(df.loc[bad, "bucket"].iloc[0])
    for c in ("in_person", "election_day"):
        df[c] = df[c].isin(["1", "true", "True"])
    return df


def survey_region_means(survey: pd.DataFrame) -> pd.DataFrame:
    """Mean recoded wait by region among in-person Election Day respondents."""
    keep = survey["in_person"] & survey["election_day"] & (survey["bucket"] != DONT_KNOW)
    s = survey[keep].assign(minutes=lambda d: d["bucket"].map(recode))
    g = s.groupby("region", sort=True)["minutes"].agg(["size", "mean", "std"]).reset_index()
    return g.rename(columns={"size": "n", "std": "sd"})


def correlate_regions(pipeline: Mapping[str, float], survey: Mapping[str, float]) -> float:
    """Pearson correlation over regions present (and finite) on both sides."""
    common = sorted(
        r for r in set(pipeline) & set(survey)
        if math.isfinite(pipeline[r]) and math.isfinite(survey[r])
    )
    if len(common) < 3:
        raise InsufficientOverlap(f"only {len(common)} overlapping regions")
    a = np.array([pipeline[r] for r in common])
    b = np.array([survey[r] for r in common])
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        raise InsufficientOverlap("a side has zero variance")
    return float(a @ b) / den


def attenuation_factor(signal_var: float, noise_var: float) -> float:
    """Expected correlation between a signal and a copy with added independent noise."""
    return math.sqrt(signal_var / (signal_var + noise_var))
