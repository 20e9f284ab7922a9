"""Marginal likelihood of the conjugate VAR and adaptive Metropolis for its hyper-parameters."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _rng
from .core_data import DesignMatrices
from .posterior_sampler import niw_log_evidence
from .priors import (
    HYPER_GROUPS,
    DummyObs,
    HyperPrior,
    MinnesotaHyper,
    augment,
    log_hyperprior,
    minnesota_niw,
)

log = logging.getLogger(__name__)

ADAPT_AFTER = 100
INITIAL_PROPOSAL_VAR = 0.01
JITTER = 1e-8


def log_marginal_likelihood(
    design: DesignMatrices,
    dummies: DummyObs | None,
    hyper: MinnesotaHyper,
    stationary=None,
) -> float:
    """ln p(data | hyper): evidence of dummies+sample minus evidence of the dummies."""
    prior = minnesota_niw(hyper, design.p, design.N, stationary)
    if dummies is None:
        dummies = DummyObs.empty(design.N, design.K)
    Y, X = augment(design, dummies)
    return niw_log_evidence(prior, Y, X) - niw_log_evidence(prior, dummies.Y, dummies.X)


@dataclass(frozen=True)
class HyperDraws:
    draws: np.ndarray
    acceptance_rate: float
    log_posterior: np.ndarray
    columns: tuple[str, ...] = ()

    def hypers(self) -> list[MinnesotaHyper]:
        return [MinnesotaHyper.from_vector(r) for r in self.draws]


def _free_index(flags: dict, N: int) -> np.ndarray:
    """Positions in the full (mu, delta, lambda, psi_1..psi_N) vector that are sampled."""
    idx = []
    if flags.get("mu"):
        idx.append(0)
    if flags.get("delta"):
        idx.append(1)
    if flags.get("lambda"):
        idx.append(2)
    if flags.get("psi"):
        idx.extend(range(3, 3 + N))
    return np.asarray(idx, dtype=int)


def hyper_log_target(
    design: DesignMatrices,
    hp: HyperPrior,
    init: MinnesotaHyper,
    make_dummies: Callable[[MinnesotaHyper], DummyObs],
    stationary=None,
) -> Callable[[np.ndarray], float]:
    """Log posterior of the free hyper-parameters on the log scale, Jacobian included."""
    base = init.as_vector()
    free = _free_index(hp.estimate, init.N)

    def target(u: np.ndarray) -> float:
        full = base.copy()
        full[free] = np.exp(u)
        try:
            h = MinnesotaHyper.from_vector(full)
            val = (
                log_marginal_likelihood(design, make_dummies(h), h, stationary)
                + log_hyperprior(h, hp)
                + float(np.sum(u))
            )
        except (ArithmeticError, ValueError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf

    return target


def adaptive_rwmh(
    log_target: Callable[[np.ndarray], float],
    init: MinnesotaHyper,
    S: int,
    burn_in: int,
    flags: dict,
    seed: int,
) -> HyperDraws:
    """Adaptive random-walk Metropolis on the log of the flagged hyper-parameters.

    ``log_target`` receives the log-scale vector of the free components (in
    the order mu, delta, lambda, psi). The proposal covariance starts at
    ``0.01 I`` and, after 100 iterations, tracks ``2.38^2/d`` times the
    running sample covariance of the chain plus a small jitter. Groups that
    are not flagged stay at their ``init`` values.
    """
    if not (S > burn_in >= 1):
        raise ValueError(f"need S > burn_in >= 1, got S={S}, burn_in={burn_in}")
    free = _free_index(flags, init.N)
    d = free.size
    if d == 0:
        raise ValueError("no hyper-parameter group selected for estimation")
    rng = _rng.stream(seed, _rng.HYPER)
    base = init.as_vector()
    u = np.log(base[free])
    lp = log_target(u)
    if not math.isfinite(lp):
        raise ValueError("log target is not finite at the initial hyper-parameters")

    scale = 2.38**2 / d
    cov = INITIAL_PROPOSAL_VAR * np.eye(d)
    mean = u.copy()
    m2 = np.zeros((d, d))
    kept = S - burn_in
    out = np.empty((kept, base.size))
    out_lp = np.empty(kept)
    accepted = 0
    for it in range(1, S + 1):
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            L = np.linalg.cholesky(cov + JITTER * np.eye(d) * 100)
        prop = u + L @ rng.standard_normal(d)
        lp_prop = log_target(prop)
        if math.log(rng.uniform()) < lp_prop - lp:
            u, lp = prop, lp_prop
            if it > burn_in:
                accepted += 1
        # Welford update of the running mean and covariance
        delta = u - mean
        mean = mean + delta / (it + 1)
        m2 = m2 + np.outer(delta, u - mean)
        if it >= ADAPT_AFTER:
            cov = scale * m2 / it + JITTER * np.eye(d)
        if it > burn_in:
            full = base.copy()
            full[free] = np.exp(u)
            out[it - burn_in - 1] = full
            out_lp[it - burn_in - 1] = lp
        if it % 1000 == 0:
            log.debug("hyper MH iteration %d/%d", it, S)
    names = ("mu", "delta", "lambda") + tuple(f"psi{i}" for i in range(1, init.N + 1))
    return HyperDraws(out, accepted / kept, out_lp, names)


def estimate_hyper(
    design: DesignMatrices,
    hp: HyperPrior,
    init: MinnesotaHyper,
    make_dummies: Callable[[MinnesotaHyper], DummyObs],
    S: int,
    burn_in: int,
    seed: int,
    stationary=None,
) -> HyperDraws:
    target = hyper_log_target(design, hp, init, make_dummies, stationary)
    return adaptive_rwmh(target, init, S, burn_in, hp.estimate, seed)


__all__ = [
    "HYPER_GROUPS",
    "HyperDraws",
    "adaptive_rwmh",
    "estimate_hyper",
    "hyper_log_target",
    "log_marginal_likelihood",
]
