"""Run configuration: a flat key=value file with section prefixes."""

from __future__ import annotations

import dataclasses
from typing import Iterable, Mapping

from .errors import ConfigInvalid
from .filters import FilterConfig
from .synth import ScenarioConfig

REQUIRED = ("run.out_dir", "data.dir")

DEFAULTS = {
    "run.seed": "0",
    "run.threads": "1",
    "calendar.target_day": "2016-11-08",
    "calendar.pre_days": "7",
    "calendar.post_days": "7",
    # state:offset pairs; empty = read the simulator's scenario.txt in data.dir
    "calendar.utc_offsets": "",
    "spells.radius_m": "60",
    "spells.lambda": "0.5",
    "radius.radii": "10,20,30,40,50,60,70,80,90,100,110,120,130,140,150",
    "radius.gain_threshold": "0.02",
    # comparison days left out of the radius scan, comma-separated ISO dates
    "radius.exclude_days": "",
    "regions.min_n": "30",
    "density.half_width": "1.0",
    "density.bin_width": "1.5",
    "robust.lambdas": "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
    "robust.radii": "10,20,30,40,50,60,70,80,90,100",
}

_FILTER_FIELDS = {f.name: f for f in dataclasses.fields(FilterConfig)}
_SIM_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{source}:{n}: expected key=value")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def load(path=None, overrides: Mapping[str, str] = ()) -> dict[str, str]:
    """Defaults, then the file, then ``overrides``; unknown keys are rejected."""
    vals = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                vals.update(parse_lines(fh, str(path)))
        except OSError as e:
            raise ConfigInvalid(f"cannot read config {path}: {e.strerror}") from None
    vals.update(dict(overrides))
    for k in vals:
        sect, _, name = k.partition(".")
        if k in DEFAULTS or k in REQUIRED:
            continue
        if sect == "filter" and name in _FILTER_FIELDS:
            continue
        if sect == "sim" and name in _SIM_FIELDS:
            continue
        raise ConfigInvalid(f"unknown config key {k!r}")
    return vals


def require(cfg: Mapping[str, str], *keys: str) -> None:
    for k in keys:
        if not cfg.get(k):
            raise ConfigInvalid(f"missing required config key {k!r}")


def floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def filter_config(cfg: Mapping[str, str]) -> FilterConfig:
    kw = {}
    for k, v in cfg.items():
        if not k.startswith("filter."):
            continue
        name = k[len("filter."):]
        default = _FILTER_FIELDS[name].default
        try:
            if isinstance(default, bool):
                kw[name] = v.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kw[name] = int(v)
            elif v.lower() in ("", "none"):
                kw[name] = None
            else:
                kw[name] = float(v)
        except ValueError:
            raise ConfigInvalid(f"bad value for {k}: {v!r}") from None
    try:
        return FilterConfig(**kw)
    except ValueError as e:
        raise ConfigInvalid(str(e)) from None


def scenario(cfg: Mapping[str, str]) -> ScenarioConfig:
    vals = {k[len("sim."):]: v for k, v in cfg.items() if k.startswith("sim.")}
    vals["seed"] = cfg["run.seed"]
    vals.setdefault("threads", cfg["run.threads"])
    return ScenarioConfig.from_mapping(vals)
