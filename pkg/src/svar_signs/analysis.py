"""Impulse responses, decompositions, shocks, fitted values, forecasts and summaries.

Per-draw functions take any object with ``A`` (K x N), ``Sigma`` (N x N)
and, for structural quantities, ``Q`` (N x N orthogonal). Arrays follow the
``(variable, shock, horizon-or-period)`` axis order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from . import _rng
from .core_data import DesignMatrices, lag_blocks


def lag_order(A: np.ndarray) -> int:
    K, N = A.shape
    p, rem = divmod(K - 1, N)
    if rem:
        raise ValueError(f"coefficient matrix shape {A.shape} is not (N*p+1) x N")
    return p


def ma_coefficients(A: np.ndarray, H: int) -> np.ndarray:
    """Reduced-form moving-average matrices Psi_0..Psi_H, shape (H+1, N, N)."""
    p = lag_order(A)
    N = A.shape[1]
    blocks = [b.T for b in lag_blocks(A, p)] if p else []
    psi = np.zeros((H + 1, N, N))
    psi[0] = np.eye(N)
    for h in range(1, H + 1):
        for l in range(1, min(h, p) + 1):
            psi[h] += blocks[l - 1] @ psi[h - l]
    return psi


def impact_matrix(draw) -> np.ndarray:
    return np.linalg.cholesky(draw.Sigma) @ draw.Q


def impulse_responses(draw, H: int) -> np.ndarray:
    """N x N x (H+1): response of variable i to shock j at horizon h."""
    if H < 0:
        raise ValueError("horizon must be >= 0")
    psi = ma_coefficients(draw.A, H)
    return np.moveaxis(psi @ impact_matrix(draw), 0, -1)


def variance_decomposition(irf: np.ndarray) -> np.ndarray:
    """Forecast-error variance shares from an N x N x (H+1) response array."""
    cum = np.cumsum(irf**2, axis=2)
    total = cum.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("zero forecast error variance (degenerate Sigma)")
    return cum / total


def residuals(draw, design: DesignMatrices) -> np.ndarray:
    return design.Y - design.X @ draw.A


def structural_shocks(draw, design: DesignMatrices) -> np.ndarray:
    """T_eff x N structural shocks ``Q' P^{-1} u_t``."""
    P = np.linalg.cholesky(draw.Sigma)
    if np.any(np.abs(np.diag(P)) < 1e-300):
        raise ValueError("singular Cholesky factor")
    w = linalg.solve_triangular(P, residuals(draw, design).T, lower=True)
    return (draw.Q.T @ w).T


def historical_decomposition(draw, design: DesignMatrices, shocks: np.ndarray | None = None):
    """Shock contributions ``(N, N, T_eff)`` and the remainder ``(N, T_eff)``.

    Contributions accumulate from the first effective period; everything
    before it (initial conditions, constant) is left in the remainder.
    """
    eps = structural_shocks(draw, design) if shocks is None else shocks
    T = eps.shape[0]
    irf = impulse_responses(draw, T - 1)
    N = eps.shape[1]
    hd = np.zeros((N, N, T))
    for s in range(T):
        # shock at period t-s hits period t with horizon s
        hd[:, :, s:] += irf[:, :, s, None] * eps[: T - s].T[None, :, :]
    remainder = design.Y.T - hd.sum(axis=1)
    return hd, remainder


def hd_at(irf: np.ndarray, eps: np.ndarray, periods: Sequence[int]) -> np.ndarray:
    """Contributions at selected 0-based periods only, shape (N, N, len(periods))."""
    out = np.empty(irf.shape[:2] + (len(periods),))
    for k, t in enumerate(periods):
        # sum_s irf[:, :, s] * eps[t - s]
        out[:, :, k] = np.einsum("ijs,sj->ij", irf[:, :, : t + 1], eps[t::-1])
    return out


def fitted_values(draw, design: DesignMatrices, rng=None, noise: bool = True) -> np.ndarray:
    mean = design.X @ draw.A
    if not noise:
        return mean
    rng = _rng.as_generator(rng)
    P = np.linalg.cholesky(draw.Sigma)
    return mean + rng.standard_normal(mean.shape) @ P.T


def conditional_sd(draw) -> np.ndarray:
    return np.sqrt(np.diag(draw.Sigma))


@dataclass(frozen=True)
class ForecastDraws:
    values: np.ndarray  # S x N x H_f
    origin: str = ""


def _forecast_path(A, design, eta):
    p = lag_order(A)
    x = design.next_regressor()
    N = A.shape[1]
    out = np.empty((eta.shape[0], N))
    for h in range(eta.shape[0]):
        y = x @ A + eta[h]
        out[h] = y
        if p:
            x = np.concatenate([y, x[: N * (p - 1)], [1.0]])
    return out


def _parallel(fn, n, workers):
    if workers <= 1:
        return [fn(s) for s in range(n)]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, range(n)))


def forecast(draws, design: DesignMatrices, H_f: int, seed: int, origin: str = "", workers: int = 1) -> ForecastDraws:
    """Simulate predictive paths, one independent stream per draw."""
    if H_f < 1:
        raise ValueError("forecast horizon must be >= 1")

    def one(s):
        d = draws[s]
        rng = _rng.stream(seed, _rng.FORECAST, s)
        P = np.linalg.cholesky(d.Sigma)
        eta = rng.standard_normal((H_f, d.Sigma.shape[0])) @ P.T
        return _forecast_path(d.A, design, eta).T

    return ForecastDraws(np.stack(_parallel(one, len(draws), workers)), origin)


def _condition_system(A, Sigma, H_f, conditions, mean_path):
    N = Sigma.shape[0]
    psi = ma_coefficients(A, H_f - 1)
    seen = set()
    rows, rhs = [], []
    for var, h, value in conditions:
        if not (0 <= var < N and 1 <= h <= H_f):
            raise ValueError(f"condition (variable {var + 1}, horizon {h}) out of range")
        if (var, h) in seen:
            raise ValueError(f"duplicate condition on variable {var + 1}, horizon {h}")
        seen.add((var, h))
        row = np.zeros((H_f, N))
        for s in range(1, h + 1):
            row[s - 1] = psi[h - s][var]
        rows.append(row.reshape(-1))
        rhs.append(value - mean_path[h - 1, var])
    return np.asarray(rows), np.asarray(rhs), psi


def conditional_forecast(
    draws, design: DesignMatrices, H_f: int, conditions, seed: int, origin: str = "", workers: int = 1
) -> ForecastDraws:
    """Predictive paths conditioned on hard values of future observations.

    ``conditions`` holds ``(variable, horizon, value)`` with a 0-based
    variable and a 1-based horizon. The stacked reduced-form innovations are
    drawn from their Gaussian distribution conditional on the linear
    constraints the conditions impose.
    """
    if H_f < 1:
        raise ValueError("forecast horizon must be >= 1")
    conditions = [(int(v), int(h), float(c)) for v, h, c in conditions]

    def one(s):
        d = draws[s]
        N = d.Sigma.shape[0]
        rng = _rng.stream(seed, _rng.CONDITIONAL, s)
        P = np.linalg.cholesky(d.Sigma)
        eta = rng.standard_normal((H_f, N)) @ P.T
        if conditions:
            mean_path = _forecast_path(d.A, design, np.zeros((H_f, N)))
            C, r, _ = _condition_system(d.A, d.Sigma, H_f, conditions, mean_path)
            V = np.kron(np.eye(H_f), d.Sigma)
            CV = C @ V
            G = CV @ C.T
            if np.linalg.matrix_rank(G) < len(conditions):
                raise ValueError("conditions are linearly dependent or inconsistent")
            flat = eta.reshape(-1)
            flat = flat + CV.T @ linalg.solve(G, r - C @ flat, assume_a="pos")
            eta = flat.reshape(H_f, N)
        return _forecast_path(d.A, design, eta).T

    return ForecastDraws(np.stack(_parallel(one, len(draws), workers)), origin)


@dataclass(frozen=True)
class SummaryTable:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    probability: float


def summarize(values: np.ndarray, probability: float = 0.9) -> SummaryTable:
    """Posterior mean, sd and equal-tailed interval over the leading (draw) axis.

    Quantiles interpolate linearly between order statistics.
    """
    if not 0 < probability < 1:
        raise ValueError("probability must lie in (0, 1)")
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        raise ValueError("no draws to summarize")
    lo, hi = (1 - probability) / 2, (1 + probability) / 2
    q = np.quantile(values, [lo, hi], axis=0, method="linear")
    sd = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1:])
    return SummaryTable(values.mean(axis=0), sd, q[0], q[1], probability)


def compute_impulse_responses(draws, H: int) -> np.ndarray:
    return np.stack([impulse_responses(d, H) for d in draws])


def compute_variance_decompositions(draws, H: int) -> np.ndarray:
    return np.stack([variance_decomposition(impulse_responses(d, H)) for d in draws])


def compute_structural_shocks(draws, design) -> np.ndarray:
    return np.stack([structural_shocks(d, design).T for d in draws])


def compute_historical_decompositions(draws, design):
    out = [historical_decomposition(d, design) for d in draws]
    return np.stack([h for h, _ in out]), np.stack([r for _, r in out])


def compute_fitted_values(draws, design, seed: int, noise: bool = True) -> np.ndarray:
    return np.stack(
        [fitted_values(d, design, _rng.stream(seed, _rng.FITTED, s), noise).T for s, d in enumerate(draws)]
    )


def compute_conditional_sd(draws) -> np.ndarray:
    return np.stack([conditional_sd(d) for d in draws])
