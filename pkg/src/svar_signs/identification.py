"""Set identification by sign, zero and narrative restrictions.

Rotations are drawn uniformly (Haar) or, under zero restrictions, column by
column inside the null space of the restricted responses. Accepted draws
carry importance weights: a volume-element correction for zero restrictions
and the inverse probability of the narrative event.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import _rng
from .analysis import hd_at, ma_coefficients, residuals
from .core_data import DesignMatrices
from .posterior_sampler import NumericalError, ReducedFormDraw

log = logging.getLogger(__name__)

NARRATIVE_KINDS = (
    "shock-sign",
    "hd-most-important",
    "hd-least-important",
    "hd-overwhelming",
    "hd-negligible",
)


class RestrictionError(ValueError):
    """Malformed or infeasible restrictions."""


class NoAcceptedDrawsError(RuntimeError):
    def __init__(self, message, stats):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class NarrativeRestriction:
    """Narrative event; ``shock``, ``variable`` and ``start`` are 1-based.

    ``start`` indexes the effective sample (after the first ``p`` lags).
    """

    kind: str = "shock-sign"
    shock: int = 1
    start: int = 1
    length: int = 1
    sign: int = 1
    variable: int = 1

    def __post_init__(self):
        if self.kind not in NARRATIVE_KINDS:
            raise RestrictionError(f"unknown narrative kind {self.kind!r}; expected one of {NARRATIVE_KINDS}")
        if self.sign not in (-1, 1):
            raise RestrictionError(f"narrative sign must be -1 or 1, got {self.sign}")
        if self.start < 1 or self.length < 1:
            raise RestrictionError("narrative start and length must be >= 1")

    @property
    def periods(self) -> range:
        """0-based effective-sample periods covered."""
        return range(self.start - 1, self.start - 1 + self.length)

    def validate(self, N: int, T_eff: int) -> None:
        if not 1 <= self.shock <= N or not 1 <= self.variable <= N:
            raise RestrictionError(f"narrative shock/variable index outside 1..{N}")
        if self.start + self.length - 1 > T_eff:
            raise RestrictionError(
                f"narrative window {self.start}..{self.start + self.length - 1} exceeds the effective sample (T_eff={T_eff})"
            )


def _codes(a, allowed, what):
    a = np.array(a, dtype=float)
    bad = ~np.isnan(a) & ~np.isin(a, allowed)
    if np.any(bad):
        idx = tuple(int(i) + 1 for i in np.argwhere(bad)[0])
        raise RestrictionError(f"{what} entry {idx} has code {a[bad][0]:g}; allowed codes are {allowed} or unset")
    return a


@dataclass(frozen=True)
class RestrictionSet:
    """Sign/zero codes on responses (variable, shock, horizon), sign codes on the
    structural matrix (shock/equation, variable), and narrative events.

    Unset entries are NaN.
    """

    sign_irf: np.ndarray
    sign_B: np.ndarray | None = None
    narrative: tuple[NarrativeRestriction, ...] = field(default_factory=tuple)

    def __post_init__(self):
        s = _codes(self.sign_irf, (-1, 0, 1), "sign_irf")
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[0] != s.shape[1]:
            raise RestrictionError(f"sign_irf must be N x N or N x N x H, got {s.shape}")
        N = s.shape[0]
        b = np.full((N, N), np.nan) if self.sign_B is None else _codes(self.sign_B, (-1, 1), "sign_B")
        if b.shape != (N, N):
            raise RestrictionError(f"sign_B must be {N} x {N}")
        object.__setattr__(self, "sign_irf", s)
        object.__setattr__(self, "sign_B", b)
        object.__setattr__(self, "narrative", tuple(self.narrative))

    @classmethod
    def unrestricted(cls, N: int) -> "RestrictionSet":
        return cls(np.full((N, N), np.nan))

    @property
    def N(self) -> int:
        return self.sign_irf.shape[0]

    @property
    def horizons(self) -> int:
        return self.sign_irf.shape[2]

    def zeros_by_shock(self) -> list[list[tuple[int, int]]]:
        """For each shock, the (variable, horizon) pairs restricted to zero."""
        out = []
        for j in range(self.N):
            vi, hi = np.nonzero(self.sign_irf[:, j, :] == 0)
            out.append(sorted(zip(vi.tolist(), hi.tolist()), key=lambda vh: (vh[1], vh[0])))
        return out

    @property
    def has_zeros(self) -> bool:
        return bool(np.any(self.sign_irf == 0))

    @property
    def has_signs(self) -> bool:
        return bool(np.any(np.abs(self.sign_irf) == 1) or np.any(~np.isnan(self.sign_B)))

    def max_horizon(self) -> int:
        """Largest horizon carrying any code (0 when none)."""
        hs = np.nonzero(np.any(~np.isnan(self.sign_irf), axis=(0, 1)))[0]
        return int(hs.max()) if hs.size else 0

    def zero_order(self) -> list[int]:
        """Shocks in decreasing order of zero count (stable)."""
        z = [len(x) for x in self.zeros_by_shock()]
        return sorted(range(self.N), key=lambda j: -z[j])

    def check_feasible(self) -> None:
        z = [len(x) for x in self.zeros_by_shock()]
        for k, j in enumerate(self.zero_order()):
            if z[j] > self.N - (k + 1):
                raise RestrictionError(
                    f"infeasible zero restrictions: shock {j + 1} has {z[j]} zeros but at most {self.N - k - 1} are allowed in position {k + 1}"
                )

    def validate(self, N: int, T_eff: int) -> None:
        if self.N != N:
            raise RestrictionError(f"restrictions are for {self.N} variables, data has {N}")
        self.check_feasible()
        for r in self.narrative:
            r.validate(N, T_eff)


@dataclass(frozen=True)
class StructuralDraw:
    A: np.ndarray
    Sigma: np.ndarray
    Q: np.ndarray
    weight: float = 1.0
    log_zero_weight: float = 0.0
    source: int = -1

    @property
    def P(self) -> np.ndarray:
        return np.linalg.cholesky(self.Sigma)

    @property
    def B(self) -> np.ndarray:
        """Impact matrix ``P Q``."""
        return self.P @ self.Q

    @property
    def structural_matrix(self) -> np.ndarray:
        """Contemporaneous matrix ``Q' P^{-1}``; row j is the equation of shock j."""
        return linalg.solve_triangular(self.P, self.Q, lower=True, trans="T").T


@dataclass
class WeightedStructuralSample:
    draws: list[StructuralDraw]
    weights: np.ndarray
    ess: float
    stats: dict = field(default_factory=dict)


def haar_sample(N: int, seed=None) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix."""
    rng = _rng.as_generator(seed)
    Z = rng.standard_normal((N, N))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def _zero_rows(psi: np.ndarray, P: np.ndarray, zeros: Sequence[tuple[int, int]]) -> np.ndarray:
    N = P.shape[0]
    if not zeros:
        return np.zeros((0, N))
    return np.stack([psi[h][v] @ P for v, h in zeros])


def null_basis(M: np.ndarray, N: int) -> np.ndarray:
    """Orthonormal basis of the null space of ``M``, requiring full row rank."""
    if M.shape[0] == 0:
        return np.eye(N)
    U, s, Vt = np.linalg.svd(M)
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > tol))
    if rank < M.shape[0]:
        raise NumericalError(f"zero-restriction system is rank deficient ({rank} < {M.shape[0]})")
    return Vt[rank:].T


def zero_restricted_q(A, Sigma, restrictions: RestrictionSet, seed=None, psi=None) -> np.ndarray:
    """Orthogonal Q whose columns meet every zero restriction exactly.

    Shocks are processed in decreasing order of zero count; column j is a
    uniform direction in the null space of its zero rows and the columns
    already drawn.
    """
    rng = _rng.as_generator(seed)
    restrictions.check_feasible()
    N = restrictions.N
    if psi is None:
        psi = ma_coefficients(np.asarray(A), restrictions.max_horizon())
    P = np.linalg.cholesky(Sigma)
    zeros = restrictions.zeros_by_shock()
    Q = np.zeros((N, N))
    done = []
    for j in restrictions.zero_order():
        M = np.vstack([_zero_rows(psi, P, zeros[j])] + [Q[:, [k]].T for k in done])
        basis = null_basis(M, N)
        x = rng.standard_normal(basis.shape[1])
        Q[:, j] = basis @ x / np.linalg.norm(x)
        done.append(j)
    return Q


def _sign_ok(values: np.ndarray, codes: np.ndarray) -> bool:
    return bool(np.all(codes * values > 0))


def check_sign(draw: StructuralDraw, irfs: np.ndarray, restrictions: RestrictionSet):
    """Per-shock sign check with column-sign normalization.

    Returns ``(passed, draw)``; a shock whose column fails but whose negated
    column passes is flipped in the returned draw.
    """
    N = restrictions.N
    H = restrictions.horizons
    passed = np.ones(N, dtype=bool)
    flip = np.ones(N)
    Bs = draw.structural_matrix if np.any(~np.isnan(restrictions.sign_B)) else None
    for j in range(N):
        codes = restrictions.sign_irf[:, j, :H]
        mask = np.abs(codes) == 1
        vals = irfs[:, j, :H][mask]
        c = codes[mask]
        bmask = ~np.isnan(restrictions.sign_B[j])
        if Bs is not None and bmask.any():
            vals = np.concatenate([vals, Bs[j, bmask]])
            c = np.concatenate([c, restrictions.sign_B[j, bmask]])
        if c.size == 0 or _sign_ok(vals, c):
            continue
        if _sign_ok(-vals, c):
            flip[j] = -1.0
        else:
            passed[j] = False
    if np.any(flip < 0):
        draw = StructuralDraw(draw.A, draw.Sigma, draw.Q * flip, draw.weight, draw.log_zero_weight, draw.source)
    return passed, draw


def _narrative_mask(r: NarrativeRestriction, eps_w, hd_w):
    """Vectorized predicate; eps_w is (..., L, N) and hd_w is (..., N, N, L)."""
    j = r.shock - 1
    if r.kind == "shock-sign":
        return np.all(r.sign * eps_w[..., j] > 0, axis=-1)
    a = np.abs(hd_w[..., r.variable - 1, :, :])  # (..., N, L)
    own = a[..., j, :]
    others = np.delete(a, j, axis=-2)
    if r.kind == "hd-most-important":
        ok = np.all(own[..., None, :] > others, axis=-2)
    elif r.kind == "hd-least-important":
        ok = np.all(own[..., None, :] < others, axis=-2)
    elif r.kind == "hd-overwhelming":
        ok = own > others.sum(axis=-2)
    else:
        ok = own < others.sum(axis=-2)
    return np.all(ok, axis=-1)


def narrative_satisfied(draw, shocks: np.ndarray, hd: np.ndarray | None, r: NarrativeRestriction) -> bool:
    """``shocks`` is T_eff x N; ``hd`` is N x N x T_eff (variable, shock, period)."""
    T = shocks.shape[0]
    if r.start + r.length - 1 > T:
        raise RestrictionError("narrative window out of range")
    w = list(r.periods)
    hd_w = None if hd is None else hd[:, :, w]
    if r.kind != "shock-sign" and hd_w is None:
        raise ValueError("historical decomposition required for this narrative restriction")
    return bool(_narrative_mask(r, shocks[w], hd_w))


class _NarrativeContext:
    """Per reduced-form draw quantities reused across rotation attempts."""

    def __init__(self, draw: ReducedFormDraw, design: DesignMatrices, restrictions: RestrictionSet):
        self.items = restrictions.narrative
        self.periods = sorted({t for r in self.items for t in r.periods})
        self.need_hd = any(r.kind != "shock-sign" for r in self.items)
        self.u = residuals(draw, design)
        self.P = np.linalg.cholesky(draw.Sigma)
        self.Pinv_u = linalg.solve_triangular(self.P, self.u.T, lower=True)
        if self.need_hd:
            self.psi = ma_coefficients(draw.A, max(self.periods))

    def shocks(self, Q):
        return (Q.T @ self.Pinv_u).T

    def irf(self, Q):
        return np.moveaxis(self.psi @ (self.P @ Q), 0, -1)

    def satisfied(self, Q) -> bool:
        eps = self.shocks(Q)
        irf = self.irf(Q) if self.need_hd else None
        for r in self.items:
            w = list(r.periods)
            hd_w = hd_at(irf, eps, w) if r.kind != "shock-sign" else None
            if not _narrative_mask(r, eps[w], hd_w):
                return False
        return True

    def weight(self, Q, M: int, rng) -> float:
        if M < 1:
            raise ValueError("narrative simulation count M must be >= 1")
        if not self.items:
            return 1.0
        eps = self.shocks(Q)
        N = eps.shape[1]
        W = self.periods
        sim = rng.standard_normal((M, len(W), N))
        pos = {t: k for k, t in enumerate(W)}
        ok = np.ones(M, dtype=bool)
        irf = self.irf(Q) if self.need_hd else None
        for r in self.items:
            w = list(r.periods)
            ew = sim[:, [pos[t] for t in w], :]
            hd_w = None
            if r.kind != "shock-sign":
                base = hd_at(irf, eps, w)  # N x N x L at the draw's shocks
                hd_w = np.broadcast_to(base, (M,) + base.shape).copy()
                for k, t in enumerate(w):
                    for s in W:
                        if s > t:
                            break
                        diff = sim[:, pos[s], :] - eps[s]  # (M, N)
                        hd_w[:, :, :, k] += irf[None, :, :, t - s] * diff[:, None, :]
            ok &= _narrative_mask(r, ew, hd_w)
        p_hat = max(ok.mean(), 1.0 / M)
        return 1.0 / p_hat


def narrative_weight(draw, design: DesignMatrices, restrictions: RestrictionSet, M: int, seed=None) -> float:
    """Inverse Monte Carlo probability of the narrative event at the draw.

    Shocks in the restricted periods are replaced by ``M`` standard-normal
    vectors; everything else stays at the draw's values.
    """
    if M < 1:
        raise ValueError("narrative simulation count M must be >= 1")
    if not restrictions.narrative:
        return 1.0
    ctx = _NarrativeContext(draw, design, restrictions)
    return ctx.weight(draw.Q, M, _rng.as_generator(seed))


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative with at least one positive entry")
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w**2))


def resample(sample: WeightedStructuralSample, S_out: int, seed=None, method: str = "stratified") -> WeightedStructuralSample:
    """Draw ``S_out`` items proportionally to the weights; returned weights are 1."""
    w = np.asarray(sample.weights, dtype=float)
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    rng = _rng.as_generator(seed)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    if method == "stratified":
        u = (np.arange(S_out) + rng.uniform(size=S_out)) / S_out
    elif method == "multinomial":
        u = np.sort(rng.uniform(size=S_out))
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, len(w) - 1)
    draws = [sample.draws[i] for i in idx]
    stats = dict(sample.stats, resampled_from=len(w))
    return WeightedStructuralSample(draws, np.ones(S_out), float(S_out), stats)


def _identify_one(i, rf: ReducedFormDraw, restrictions, design, max_tries, M, seed, zero_weight_fn):
    N = restrictions.N
    rng = _rng.stream(seed, _rng.ROTATION, i)
    psi = ma_coefficients(rf.A, restrictions.max_horizon())
    P = np.linalg.cholesky(rf.Sigma)
    ctx = _NarrativeContext(rf, design, restrictions) if restrictions.narrative else None
    for attempt in range(1, max_tries + 1):
        if restrictions.has_zeros:
            Q = zero_restricted_q(rf.A, rf.Sigma, restrictions, rng, psi=psi)
        else:
            Q = haar_sample(N, rng)
        draw = StructuralDraw(rf.A, rf.Sigma, Q, source=i)
        if restrictions.has_signs:
            irfs = np.moveaxis(psi @ (P @ Q), 0, -1)
            passed, draw = check_sign(draw, irfs, restrictions)
            if not passed.all():
                continue
        if ctx is not None and not ctx.satisfied(draw.Q):
            continue
        lzw = zero_weight_fn(draw, restrictions) if restrictions.has_zeros else 0.0
        nw = ctx.weight(draw.Q, M, _rng.stream(seed, _rng.NARRATIVE, i)) if ctx is not None else 1.0
        return StructuralDraw(rf.A, rf.Sigma, draw.Q, nw, lzw, i), attempt
    return None, max_tries


def identify(
    posterior_draws: Sequence[ReducedFormDraw],
    restrictions: RestrictionSet,
    design: DesignMatrices,
    S_target: int | None = None,
    max_tries: int = 100,
    M: int = 1000,
    seed: int = 0,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> WeightedStructuralSample:
    """Accept-reject over rotations with importance weights.

    Each reduced-form draw gets up to ``max_tries`` fresh rotations and
    yields at most one structural draw. Results are ordered by source draw,
    so the outcome does not depend on ``workers``.
    """
    from .zero_weights import log_zero_weight

    restrictions.validate(design.N, design.T_eff)
    n = len(posterior_draws)
    S_target = n if S_target is None else S_target
    fn = lambda i: _identify_one(
        i, posterior_draws[i], restrictions, design, max_tries, M, seed, log_zero_weight
    )
    results = []
    chunk = 1000
    for lo in range(0, n, chunk):
        idx = range(lo, min(n, lo + chunk))
        if workers <= 1:
            results.extend(fn(i) for i in idx)
        else:
            with ThreadPoolExecutor(workers) as ex:
                results.extend(ex.map(fn, idx))
        if progress is not None:
            progress(min(n, lo + chunk), n)
        if sum(d is not None for d, _ in results) >= S_target:
            break
    accepted = [d for d, _ in results if d is not None][:S_target]
    tries = sum(t for _, t in results)
    stats = {
        "reduced_form_draws": len(results),
        "rotations_tried": tries,
        "accepted": len(accepted),
        "acceptance_rate": len(accepted) / max(len(results), 1),
        "rotation_acceptance_rate": len(accepted) / max(tries, 1),
    }
    if not accepted:
        raise NoAcceptedDrawsError(
            f"no draw satisfied the restrictions after {len(results)} reduced-form draws and {tries} rotations",
            stats,
        )
    lz = np.array([d.log_zero_weight for d in accepted])
    w = np.exp(lz - lz.max()) * np.array([d.weight for d in accepted])
    stats["narrative_weight_mean"] = float(np.mean([d.weight for d in accepted]))
    return WeightedStructuralSample(accepted, w, ess(w), stats)
