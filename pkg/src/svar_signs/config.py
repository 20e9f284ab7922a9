"""Run configuration: a YAML document with nested sections.

Variables and shocks may be referenced by 1-based index or by name; periods
by label (``1987Q4``, ``1987.75``) when the data carry a calendar.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .priors import HYPER_GROUPS


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


SECTIONS = {"data", "model", "restrictions", "hyper", "sampler", "outputs"}


@dataclass
class RunConfig:
    data_path: Path
    header: bool | None = None
    start: Any = None
    frequency: int = 1
    p: int = 1
    stationary: list = field(default_factory=list)
    sign_irf: list = field(default_factory=list)
    sign_B: list = field(default_factory=list)
    narrative: list = field(default_factory=list)
    hyper_estimate: dict = field(default_factory=lambda: {g: False for g in HYPER_GROUPS})
    hyper_S: int = 15000
    hyper_burn_in: int = 5000
    hyper_prior: dict = field(default_factory=dict)
    hyper_values: dict = field(default_factory=dict)
    soc: bool = True
    sur: bool = True
    S: int = 1000
    max_tries: int = 100
    M: int = 1000
    seed: int = 0
    workers: int = 1
    resampling: str = "stratified"
    probability: float = 0.9
    outputs: dict = field(default_factory=dict)
    write_draws: bool = True
    out_dir: Path = Path("out")

    @property
    def hyper_estimated(self) -> bool:
        return any(self.hyper_estimate.values())


def _section(doc, name):
    v = doc.get(name) or {}
    if not isinstance(v, dict):
        raise ConfigError(name, "must be a mapping")
    return v


def _int(sec, key, prefix, default, lo=None):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{prefix}.{key}", f"must be >= {lo}, got {v}")
    return int(v)


def _bool(sec, key, prefix, default):
    v = sec.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{prefix}.{key}", f"expected true/false, got {v!r}")
    return v


def _entries(sec, key, prefix, required):
    items = sec.get(key) or []
    if not isinstance(items, list):
        raise ConfigError(f"{prefix}.{key}", "must be a list of entries")
    for i, e in enumerate(items):
        where = f"{prefix}.{key}[{i}]"
        if not isinstance(e, dict):
            raise ConfigError(where, "must be a mapping")
        missing = [k for k in required if k not in e]
        if missing:
            raise ConfigError(where, f"missing keys {missing}")
    return items


OUTPUT_KEYS = {
    "irf", "fevd", "hd", "shocks", "fitted", "conditional_sd",
    "forecast", "conditional_forecast", "probability", "directory", "write_draws",
}


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown section; expected {sorted(SECTIONS)}")
    base_dir = Path(base_dir)
    data = _section(doc, "data")
    if "path" not in data:
        raise ConfigError("data.path", "required")
    path = Path(data["path"])
    cfg = RunConfig(data_path=path if path.is_absolute() else base_dir / path)
    if "header" in data:
        cfg.header = _bool(data, "header", "data", None)
    cfg.start = data.get("start")
    cfg.frequency = _int(data, "frequency", "data", 1, lo=1)

    model = _section(doc, "model")
    cfg.p = _int(model, "p", "model", 1, lo=1)
    st = model.get("stationary", [])
    if not isinstance(st, list):
        raise ConfigError("model.stationary", "must be a list of booleans or variable names")
    cfg.stationary = st

    r = _section(doc, "restrictions")
    cfg.sign_irf = _entries(r, "sign_irf", "restrictions", ("variable", "shock", "code"))
    for i, e in enumerate(cfg.sign_irf):
        if e["code"] not in (-1, 0, 1) or isinstance(e["code"], bool):
            raise ConfigError(f"restrictions.sign_irf[{i}].code", f"must be -1, 0 or 1, got {e['code']!r}")
        _int(e, "horizon", f"restrictions.sign_irf[{i}]", 0, lo=0)
    cfg.sign_B = _entries(r, "sign_B", "restrictions", ("shock", "variable", "code"))
    for i, e in enumerate(cfg.sign_B):
        if e["code"] not in (-1, 1) or isinstance(e["code"], bool):
            raise ConfigError(f"restrictions.sign_B[{i}].code", f"must be -1 or 1, got {e['code']!r}")
    cfg.narrative = _entries(r, "narrative", "restrictions", ("start",))

    h = _section(doc, "hyper")
    est = h.get("estimate", {})
    if not isinstance(est, dict) or set(est) - set(HYPER_GROUPS):
        raise ConfigError("hyper.estimate", f"must map a subset of {HYPER_GROUPS} to booleans")
    cfg.hyper_estimate = {g: _bool(est, g, "hyper.estimate", False) for g in HYPER_GROUPS}
    cfg.hyper_S = _int(h, "S", "hyper", 15000, lo=2)
    cfg.hyper_burn_in = _int(h, "burn_in", "hyper", 5000, lo=1)
    if cfg.hyper_estimated and cfg.hyper_burn_in >= cfg.hyper_S:
        raise ConfigError("hyper.burn_in", "must be smaller than hyper.S")
    cfg.hyper_prior = dict(h.get("prior") or {})
    cfg.hyper_values = dict(h.get("values") or {})
    for k, v in cfg.hyper_values.items():
        if k not in ("mu", "delta", "lambda", "psi"):
            raise ConfigError(f"hyper.values.{k}", "unknown hyper-parameter")
    cfg.soc = _bool(h, "soc", "hyper", True)
    cfg.sur = _bool(h, "sur", "hyper", True)

    s = _section(doc, "sampler")
    cfg.S = _int(s, "S", "sampler", 1000, lo=1)
    cfg.max_tries = _int(s, "max_tries", "sampler", 100, lo=1)
    cfg.M = _int(s, "M", "sampler", 1000, lo=1)
    cfg.seed = _int(s, "seed", "sampler", 0, lo=0)
    cfg.workers = _int(s, "workers", "sampler", 1, lo=1)
    cfg.resampling = s.get("resampling", "stratified")
    if cfg.resampling not in ("stratified", "multinomial"):
        raise ConfigError("sampler.resampling", "must be 'stratified' or 'multinomial'")

    o = _section(doc, "outputs")
    unknown = set(o) - OUTPUT_KEYS
    if unknown:
        raise ConfigError(f"outputs.{sorted(unknown)[0]}", "unknown output")
    prob = o.get("probability", 0.9)
    if not isinstance(prob, (int, float)) or not 0 < prob < 1:
        raise ConfigError("outputs.probability", f"must lie in (0, 1), got {prob!r}")
    cfg.probability = float(prob)
    cfg.write_draws = _bool(o, "write_draws", "outputs", True)
    for key in ("irf", "fevd", "forecast", "conditional_forecast"):
        if key in o:
            sec = o[key]
            if not isinstance(sec, dict):
                raise ConfigError(f"outputs.{key}", "must be a mapping with a horizon")
            lo = 0 if key in ("irf", "fevd") else 1
            _int(sec, "horizon", f"outputs.{key}", 20 if lo == 0 else 8, lo=lo)
    if "conditional_forecast" in o:
        _entries(o["conditional_forecast"], "conditions", "outputs.conditional_forecast",
                 ("variable", "horizon", "value"))
    for key in ("hd", "shocks", "fitted", "conditional_sd"):
        if key in o:
            _bool(o, key, "outputs", False)
    cfg.outputs = {k: v for k, v in o.items() if k not in ("probability", "directory", "write_draws")}
    out = Path(o.get("directory", "out"))
    cfg.out_dir = out if out.is_absolute() else base_dir / out
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"invalid YAML: {e}") from None
    return parse_config(doc or {}, path.parent)
