"""Command-line front end: ``svar-signs run|validate|replicate-optimism``."""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import _rng
from .analysis import (
    compute_conditional_sd,
    compute_fitted_values,
    compute_historical_decompositions,
    compute_impulse_responses,
    compute_structural_shocks,
    compute_variance_decompositions,
    conditional_forecast,
    forecast,
    summarize,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .core_data import DataError, DesignMatrices, TimeSeries, build_design, load_csv, parse_period, period_index
from .hyper_sampler import estimate_hyper
from .identification import (
    NarrativeRestriction,
    NoAcceptedDrawsError,
    RestrictionError,
    RestrictionSet,
    identify,
    resample,
)
from .posterior_sampler import NumericalError, niw_update, sample_niw
from .priors import HyperPrior, MinnesotaHyper, default_psi, dummy_obs, minnesota_niw

log = logging.getLogger("svar_signs")

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NO_DRAWS, EXIT_INTERRUPT = 1, 2, 3, 130
OPTIMISM_ENV = "SVAR_SIGNS_OPTIMISM_CSV"


@dataclass
class Prepared:
    cfg: RunConfig
    ts: TimeSeries
    design: DesignMatrices
    restrictions: RestrictionSet
    stationary: np.ndarray
    conditions: list


def _index(ref, names, key, what="variable"):
    """Resolve a 1-based index or a variable name to a 0-based index."""
    N = len(names)
    if isinstance(ref, str):
        if ref in names:
            return names.index(ref)
        raise ConfigError(key, f"unknown {what} {ref!r}; known names are {list(names)}")
    if isinstance(ref, bool) or not isinstance(ref, int) or not 1 <= ref <= N:
        raise ConfigError(key, f"{what} must be a name or an index in 1..{N}, got {ref!r}")
    return ref - 1


def _label(x):
    return tuple(x) if isinstance(x, list) else x


def build_restrictions(cfg: RunConfig, ts: TimeSeries, p: int) -> RestrictionSet:
    N, names = ts.N, list(ts.names)
    H = max([e.get("horizon", 0) for e in cfg.sign_irf], default=0) + 1
    sign_irf = np.full((N, N, H), np.nan)
    for i, e in enumerate(cfg.sign_irf):
        key = f"restrictions.sign_irf[{i}]"
        v = _index(e["variable"], names, f"{key}.variable")
        s = _index(e["shock"], names, f"{key}.shock", "shock")
        h = e.get("horizon", 0)
        if not np.isnan(sign_irf[v, s, h]) and sign_irf[v, s, h] != e["code"]:
            raise ConfigError(key, "conflicts with an earlier entry for the same response")
        sign_irf[v, s, h] = e["code"]
    sign_B = np.full((N, N), np.nan)
    for i, e in enumerate(cfg.sign_B):
        key = f"restrictions.sign_B[{i}]"
        s = _index(e["shock"], names, f"{key}.shock", "shock")
        v = _index(e["variable"], names, f"{key}.variable")
        sign_B[s, v] = e["code"]
    narrative = []
    for i, e in enumerate(cfg.narrative):
        key = f"restrictions.narrative[{i}]"
        try:
            row = period_index(ts, _label(e["start"]))
        except DataError as err:
            raise ConfigError(f"{key}.start", str(err)) from None
        if row <= p:
            raise ConfigError(f"{key}.start", f"period {e['start']} falls inside the first p={p} lags")
        try:
            narrative.append(
                NarrativeRestriction(
                    kind=e.get("kind", "shock-sign"),
                    shock=_index(e.get("shock", 1), names, f"{key}.shock", "shock") + 1,
                    start=row - p,
                    length=e.get("length", 1),
                    sign=e.get("sign", 1),
                    variable=_index(e.get("variable", 1), names, f"{key}.variable") + 1,
                )
            )
        except RestrictionError as err:
            raise ConfigError(key, str(err)) from None
    r = RestrictionSet(sign_irf, sign_B, tuple(narrative))
    try:
        r.validate(N, ts.T - p)
    except RestrictionError as err:
        raise ConfigError("restrictions", str(err)) from None
    return r


def _stationary(cfg: RunConfig, names) -> np.ndarray:
    st = cfg.stationary
    out = np.zeros(len(names), dtype=bool)
    if st and all(isinstance(x, bool) for x in st):
        if len(st) != len(names):
            raise ConfigError("model.stationary", f"expected {len(names)} flags, got {len(st)}")
        return np.asarray(st)
    for k, x in enumerate(st):
        out[_index(x, list(names), f"model.stationary[{k}]")] = True
    return out


def prepare(cfg: RunConfig) -> Prepared:
    start = parse_period(_label(cfg.start), cfg.frequency) if cfg.start is not None else (1, 0)
    ts = load_csv(cfg.data_path, header=cfg.header, start=start, frequency=cfg.frequency)
    if ts.T <= cfg.p:
        raise ConfigError("model.p", f"lag order {cfg.p} needs more than {cfg.p} observations, data has {ts.T}")
    design = build_design(ts, cfg.p)
    restrictions = build_restrictions(cfg, ts, cfg.p)
    names = list(ts.names)
    conditions = []
    cf = cfg.outputs.get("conditional_forecast")
    if cf:
        Hc = cf.get("horizon", 8)
        seen = set()
        for i, c in enumerate(cf.get("conditions", [])):
            key = f"outputs.conditional_forecast.conditions[{i}]"
            v = _index(c["variable"], names, f"{key}.variable")
            h = c["horizon"]
            if not isinstance(h, int) or not 1 <= h <= Hc:
                raise ConfigError(f"{key}.horizon", f"must lie in 1..{Hc}")
            if (v, h) in seen:
                raise ConfigError(key, "duplicate condition")
            seen.add((v, h))
            conditions.append((v, h, float(c["value"])))
    for k in cfg.hyper_values:
        if k == "psi" and len(np.atleast_1d(cfg.hyper_values[k])) != ts.N:
            raise ConfigError("hyper.values.psi", f"expected {ts.N} entries")
    return Prepared(cfg, ts, design, restrictions, _stationary(cfg, names), conditions)


def _initial_hyper(prep: Prepared) -> MinnesotaHyper:
    v = prep.cfg.hyper_values
    psi = v.get("psi")
    psi = default_psi(prep.ts, prep.cfg.p) if psi is None else np.asarray(psi, dtype=float)
    try:
        return MinnesotaHyper(v.get("mu", 1.0), v.get("delta", 1.0), v.get("lambda", 0.2), psi)
    except ValueError as err:
        raise ConfigError("hyper.values", str(err)) from None


def _hyper_prior(cfg: RunConfig) -> HyperPrior:
    try:
        return HyperPrior(estimate=cfg.hyper_estimate, **cfg.hyper_prior)
    except (TypeError, ValueError) as err:
        raise ConfigError("hyper.prior", str(err)) from None


# output writers ---------------------------------------------------------------

def _fmt(values, precision=12):
    return np.char.mod(f"%.{precision}g", np.asarray(values, dtype=float).ravel())


def write_long(path: Path, axes, values) -> None:
    """Long table with one row per array element; ``axes`` is [(column, labels)]."""
    values = np.asarray(values)
    labels = [[str(x) for x in lab] for _, lab in axes]
    if values.shape != tuple(len(l) for l in labels):
        raise ValueError(f"{path.name}: array shape {values.shape} does not match the labels")
    vals = _fmt(values)
    with open(path, "w", newline="") as fh:
        fh.write(",".join([c for c, _ in axes] + ["value"]) + "\n")
        for key, v in zip(itertools.product(*labels), vals):
            fh.write(",".join(key) + "," + v + "\n")


def write_summary(path: Path, axes, values, probability: float) -> None:
    """Mean, sd and equal-tailed interval over the leading draw axis."""
    tab = summarize(values, probability)
    labels = [[str(x) for x in lab] for _, lab in axes]
    cols = [_fmt(a) for a in (tab.mean, tab.sd, tab.lower, tab.upper)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join([c for c, _ in axes] + ["mean", "sd", "lo", "hi"]) + "\n")
        for k, key in enumerate(itertools.product(*labels)):
            fh.write(",".join(list(key) + [c[k] for c in cols]) + "\n")


def _emit(out: Path, name: str, axes, values, cfg: RunConfig, written: list) -> None:
    if cfg.write_draws:
        write_long(out / f"{name}.csv", [("draw", range(1, values.shape[0] + 1))] + axes, values)
        written.append(f"{name}.csv")
    write_summary(out / f"{name}_summary.csv", axes, values, cfg.probability)
    written.append(f"{name}_summary.csv")


def _versions() -> dict:
    try:
        own = metadata.version("svar-signs")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"svar_signs": own, "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def run_pipeline(cfg: RunConfig, progress=None) -> dict:
    """Execute the configured workflow and write all outputs; returns the manifest."""
    t0 = time.perf_counter()
    prep = prepare(cfg)
    ts, design, restrictions = prep.ts, prep.design, prep.restrictions
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    timings = {}

    hyper = _initial_hyper(prep)
    make_dummies = lambda h: dummy_obs(h, ts, cfg.p, soc=cfg.soc, sur=cfg.sur)
    hyper_stats = None
    t = time.perf_counter()
    if cfg.hyper_estimated:
        hp = _hyper_prior(cfg)
        hd = estimate_hyper(design, hp, hyper, make_dummies, cfg.hyper_S, cfg.hyper_burn_in, cfg.seed, prep.stationary)
        write_long_trace(out / "hyper_trace.csv", hd)
        written.append("hyper_trace.csv")
        hypers = hd.hypers()
        hyper_stats = {"draws": len(hypers), "acceptance_rate": hd.acceptance_rate}
    else:
        hypers = [hyper]
    timings["hyper"] = time.perf_counter() - t

    t = time.perf_counter()
    posts = [
        niw_update(minnesota_niw(h, cfg.p, ts.N, prep.stationary), design, make_dummies(h)) for h in hypers
    ]
    rf = sample_niw(posts, cfg.S, cfg.seed, workers=cfg.workers)
    timings["posterior"] = time.perf_counter() - t

    t = time.perf_counter()
    try:
        sample = identify(
            rf, restrictions, design, max_tries=cfg.max_tries, M=cfg.M,
            seed=cfg.seed, workers=cfg.workers, progress=progress,
        )
    finally:
        timings["identification"] = time.perf_counter() - t
    with open(out / "weights.csv", "w", newline="") as fh:
        fh.write("draw,source,weight\n")
        for k, (d, w) in enumerate(zip(sample.draws, sample.weights), start=1):
            fh.write(f"{k},{d.source + 1},{float(w)!r}\n")
    written.append("weights.csv")
    stats = dict(sample.stats)
    retained_ess = sample.ess
    if not np.allclose(sample.weights, sample.weights[0], rtol=0, atol=0):
        sample = resample(sample, len(sample.draws), _rng.stream(cfg.seed, _rng.RESAMPLE), cfg.resampling)
    draws = sample.draws

    t = time.perf_counter()
    names = list(ts.names)
    shocks = range(1, ts.N + 1)
    periods = [ts.period_label(r) for r in range(cfg.p + 1, ts.T + 1)]
    o = cfg.outputs
    if "irf" in o:
        H = o["irf"].get("horizon", 20)
        _emit(out, "irf", [("variable", names), ("shock", shocks), ("horizon", range(H + 1))],
              compute_impulse_responses(draws, H), cfg, written)
    if "fevd" in o:
        H = o["fevd"].get("horizon", 20)
        _emit(out, "fevd", [("variable", names), ("shock", shocks), ("horizon", range(H + 1))],
              compute_variance_decompositions(draws, H), cfg, written)
    if o.get("shocks"):
        _emit(out, "shocks", [("shock", shocks), ("period", periods)],
              compute_structural_shocks(draws, design), cfg, written)
    if o.get("hd"):
        hd, rem = compute_historical_decompositions(draws, design)
        _emit(out, "hd", [("variable", names), ("shock", shocks), ("period", periods)], hd, cfg, written)
        _emit(out, "hd_remainder", [("variable", names), ("period", periods)], rem, cfg, written)
    if o.get("fitted"):
        _emit(out, "fitted", [("variable", names), ("period", periods)],
              compute_fitted_values(draws, design, cfg.seed), cfg, written)
    if o.get("conditional_sd"):
        _emit(out, "conditional_sd", [("variable", names)], compute_conditional_sd(draws), cfg, written)
    origin = ts.period_label(ts.T)
    if "forecast" in o:
        H = o["forecast"].get("horizon", 8)
        fc = forecast(draws, design, H, cfg.seed, origin, cfg.workers)
        _emit(out, "forecast", [("variable", names), ("horizon", range(1, H + 1))], fc.values, cfg, written)
    if "conditional_forecast" in o:
        H = o["conditional_forecast"].get("horizon", 8)
        fc = conditional_forecast(draws, design, H, prep.conditions, cfg.seed, origin, cfg.workers)
        _emit(out, "conditional_forecast", [("variable", names), ("horizon", range(1, H + 1))],
              fc.values, cfg, written)
    timings["outputs"] = time.perf_counter() - t

    dummies = make_dummies(hyper)
    manifest = {
        "seed": cfg.seed,
        "draws_requested": cfg.S,
        "draws_retained": stats["accepted"],
        "acceptance_rate": stats["acceptance_rate"],
        "ess": retained_ess,
        "runtime_seconds": time.perf_counter() - t0,
        "module_versions": _versions(),
        "identification": stats,
        "hyper_estimation": hyper_stats,
        "timings": timings,
        "design": {
            "T": ts.T, "T_eff": design.T_eff, "N": ts.N, "K": design.K, "p": cfg.p,
            "soc_rows": int(dummies.Ysoc.shape[0]), "sur_rows": int(dummies.Ysur.shape[0]),
            "augmented_rows": design.T_eff + dummies.rows,
        },
        "files": written,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def write_long_trace(path: Path, hd) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(("iteration",) + hd.columns + ("log_posterior",)) + "\n")
        for k, (row, lp) in enumerate(zip(hd.draws, hd.log_posterior), start=1):
            fh.write(",".join([str(k)] + list(_fmt(row)) + [repr(float(lp))]) + "\n")


# entry points -----------------------------------------------------------------

def optimism_config(outdir: str | Path) -> RunConfig:
    """Bundled replication config with its data path resolved."""
    pkg = resources.files("svar_signs") / "data"
    doc = yaml.safe_load((pkg / "optimism.yaml").read_text())
    doc.setdefault("data", {})["path"] = os.environ.get(OPTIMISM_ENV) or str(pkg / "optimism.csv")
    doc.setdefault("outputs", {})["directory"] = str(Path(outdir).resolve())
    return parse_config(doc)


def _overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {k: getattr(args, k) for k in ("seed", "workers") if getattr(args, k, None) is not None}
    if getattr(args, "draws", None) is not None:
        changes["S"] = args.draws
    return replace(cfg, **changes)


def _progress():
    state = {"done": 0}

    def report(done, total):
        state["done"] = done
        print(f"svar-signs: identification {done}/{total} draws", file=sys.stderr, flush=True)

    return report, state


def _execute(cfg: RunConfig) -> int:
    report, state = _progress()
    try:
        m = run_pipeline(cfg, report)
    except KeyboardInterrupt:
        print(f"svar-signs: interrupted after {state['done']} processed draws", file=sys.stderr)
        return EXIT_INTERRUPT
    print(
        f"draws retained {m['draws_retained']}/{m['draws_requested']}, "
        f"acceptance rate {m['acceptance_rate']:.4f}, ess {m['ess']:.4f}; outputs in {cfg.out_dir}"
    )
    return 0


def _guard(fn, *a) -> int:
    try:
        return fn(*a)
    except NoAcceptedDrawsError as err:
        s = err.stats
        print(
            f"error: {err} (reduced-form draws {s['reduced_form_draws']}, rotations tried {s['rotations_tried']}, "
            f"acceptance rate {s['acceptance_rate']:.4f})",
            file=sys.stderr,
        )
        return EXIT_NO_DRAWS
    except (ConfigError, DataError, RestrictionError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError, ValueError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_run(args) -> int:
    return _guard(lambda: _execute(_overrides(load_config(args.config), args)))


def cmd_validate(args) -> int:
    def go():
        prep = prepare(load_config(args.config))
        r = prep.restrictions
        print(
            f"ok: T={prep.ts.T}, N={prep.ts.N}, p={prep.cfg.p}, T_eff={prep.design.T_eff}, "
            f"sign/zero horizons={r.horizons}, narrative={len(r.narrative)}"
        )
        return 0

    return _guard(go)


def cmd_replicate(args) -> int:
    return _guard(lambda: _execute(_overrides(optimism_config(args.outdir), args)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svar-signs", description="Bayesian SVARs identified by sign, zero and narrative restrictions.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="override sampler.seed")
        p.add_argument("--draws", type=int, help="override sampler.S")
        p.add_argument("--workers", type=int, help="override sampler.workers")

    p = sub.add_parser("run", help="run the workflow described by a YAML config")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="check a config and its data without sampling")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("replicate-optimism", help="run the bundled optimism-shock example")
    p.add_argument("outdir")
    common(p)
    p.set_defaults(func=cmd_replicate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
