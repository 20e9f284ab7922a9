"""Minnesota normal-inverse-Wishart prior, dummy observations and hyper-priors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .core_data import DataError, DesignMatrices, TimeSeries, build_design

CONSTANT_VARIANCE = 1e6

# gamma with mode 1 and standard deviation 1: k = (3 + sqrt 5)/2, theta = 1/(k - 1)
_UNIT_MODE_SHAPE = (3.0 + math.sqrt(5.0)) / 2.0
_UNIT_MODE_SCALE = 1.0 / (_UNIT_MODE_SHAPE - 1.0)


@dataclass(frozen=True)
class MinnesotaHyper:
    mu: float = 1.0
    delta: float = 1.0
    lam: float = 0.2
    psi: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float)).copy()
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        vals = np.concatenate([[self.mu, self.delta, self.lam], psi])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"hyper-parameters must be positive and finite: {vals}")

    @property
    def N(self) -> int:
        return self.psi.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.mu, self.delta, self.lam], self.psi])

    @classmethod
    def from_vector(cls, v) -> "MinnesotaHyper":
        v = np.asarray(v, dtype=float)
        return cls(mu=float(v[0]), delta=float(v[1]), lam=float(v[2]), psi=v[3:])


HYPER_GROUPS = ("mu", "delta", "lambda", "psi")


@dataclass(frozen=True)
class HyperPrior:
    """Gamma (shape, scale) priors for mu, delta, lambda; inverse gamma for each psi."""

    mu_shape: float = _UNIT_MODE_SHAPE
    mu_scale: float = _UNIT_MODE_SCALE
    delta_shape: float = _UNIT_MODE_SHAPE
    delta_scale: float = _UNIT_MODE_SCALE
    lambda_shape: float = 1.370156
    lambda_scale: float = 0.5403124
    psi_shape: float = 0.02**2 / 2
    psi_scale: float = 0.02**2 / 2
    estimate: dict = field(default_factory=lambda: {g: True for g in HYPER_GROUPS})

    def __post_init__(self):
        for name in ("mu_shape", "mu_scale", "delta_shape", "delta_scale",
                     "lambda_shape", "lambda_scale", "psi_shape", "psi_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        flags = {g: bool(self.estimate.get(g, False)) for g in HYPER_GROUPS}
        unknown = set(self.estimate) - set(HYPER_GROUPS)
        if unknown:
            raise ValueError(f"unknown hyper-parameter groups {sorted(unknown)}")
        object.__setattr__(self, "estimate", flags)


@dataclass(frozen=True)
class NIWPrior:
    """Matrix-normal inverse-Wishart: A | Sigma ~ MN(B_bar, Omega, Sigma), Sigma ~ IW(S0, nu0)."""

    B_bar: np.ndarray
    Omega: np.ndarray
    S0: np.ndarray
    nu0: float

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B_bar, dtype=float))
        Om = np.asarray(self.Omega, dtype=float)
        if Om.ndim == 1:
            Om = np.diag(Om)
        S0 = np.atleast_2d(np.asarray(self.S0, dtype=float))
        K, N = B.shape
        if Om.shape != (K, K) or S0.shape != (N, N):
            raise ValueError(f"inconsistent prior shapes B_bar {B.shape}, Omega {Om.shape}, S0 {S0.shape}")
        if not self.nu0 > N - 1:
            raise ValueError(f"nu0 must exceed N-1={N - 1}, got {self.nu0}")
        for name, M in (("Omega", Om), ("S0", S0)):
            if not np.allclose(M, M.T, rtol=1e-10, atol=0):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
        object.__setattr__(self, "B_bar", B)
        object.__setattr__(self, "Omega", Om)
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "nu0", float(self.nu0))

    @property
    def K(self) -> int:
        return self.B_bar.shape[0]

    @property
    def N(self) -> int:
        return self.B_bar.shape[1]


@dataclass(frozen=True)
class DummyObs:
    """Sum-of-coefficients and single-unit-root dummy rows.

    A disabled block is an array with zero rows.
    """

    Ysoc: np.ndarray
    Xsoc: np.ndarray
    Ysur: np.ndarray
    Xsur: np.ndarray

    @classmethod
    def empty(cls, N: int, K: int) -> "DummyObs":
        return cls(np.zeros((0, N)), np.zeros((0, K)), np.zeros((0, N)), np.zeros((0, K)))

    @property
    def Y(self) -> np.ndarray:
        return np.vstack([self.Ysoc, self.Ysur])

    @property
    def X(self) -> np.ndarray:
        return np.vstack([self.Xsoc, self.Xsur])

    @property
    def rows(self) -> int:
        return self.Ysoc.shape[0] + self.Ysur.shape[0]


def default_psi(ts: TimeSeries, p: int) -> np.ndarray:
    """Residual variances of univariate AR(p)-with-constant least-squares fits."""
    if ts.T <= p + 2:
        raise DataError(f"need T > p + 2 = {p + 2} observations for AR({p}) variances")
    out = np.empty(ts.N)
    for i in range(ts.N):
        d = build_design(TimeSeries(ts.values[:, i], (ts.names[i],)), p)
        y, X = d.Y[:, 0], d.X
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DataError(f"variable {ts.names[i]!r}: singular AR({p}) regression")
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = y.size - X.shape[1]
        s2 = resid @ resid / dof if dof > 0 else resid @ resid / y.size
        scale = max(np.var(ts.values[:, i]), np.mean(ts.values[:, i] ** 2), 1e-300)
        if not s2 > 1e-20 * scale:
            raise DataError(f"variable {ts.names[i]!r}: zero residual variance in AR({p}) fit")
        out[i] = s2
    return out


def minnesota_niw(hyper: MinnesotaHyper, p: int, N: int, stationary=None) -> NIWPrior:
    if hyper.N != N:
        raise ValueError(f"psi has {hyper.N} entries, expected {N}")
    K = N * p + 1
    stationary = np.zeros(N, bool) if stationary is None else np.asarray(stationary, bool)
    B_bar = np.zeros((K, N))
    if p >= 1:
        B_bar[:N, :N] = np.diag(np.where(stationary, 0.0, 1.0))
    lags = np.repeat(np.arange(1, p + 1), N)
    psi_rep = np.tile(hyper.psi, p)
    omega = np.concatenate([hyper.lam**2 / (lags**2 * psi_rep), [CONSTANT_VARIANCE]])
    return NIWPrior(B_bar, np.diag(omega), np.diag(hyper.psi), N + 2)


def dummy_obs(hyper: MinnesotaHyper, ts: TimeSeries, p: int, soc: bool = True, sur: bool = True) -> DummyObs:
    if ts.T < p:
        raise DataError(f"need at least p={p} observations for dummy means")
    if not (hyper.mu > 0 and hyper.delta > 0):
        raise ValueError("mu and delta must be positive")
    N, K = ts.N, ts.N * p + 1
    ybar = ts.values[:p].mean(axis=0)
    d = DummyObs.empty(N, K)
    if soc:
        block = np.diag(ybar) / hyper.mu
        d = replace(d, Ysoc=block, Xsoc=np.hstack([np.tile(block, p), np.zeros((N, 1))]))
    if sur:
        row = ybar[None, :] / hyper.delta
        d = replace(d, Ysur=row, Xsur=np.hstack([np.tile(row, p), [[1.0 / hyper.delta]]]))
    return d


def augment(design: DesignMatrices, dummies: DummyObs) -> tuple[np.ndarray, np.ndarray]:
    """Dummy rows stacked on top of the sample."""
    return np.vstack([dummies.Y, design.Y]), np.vstack([dummies.X, design.X])


def gamma_logpdf(x: float, shape: float, scale: float) -> float:
    return (shape - 1) * math.log(x) - x / scale - special.gammaln(shape) - shape * math.log(scale)


def invgamma_logpdf(x, shape: float, scale: float):
    x = np.asarray(x, dtype=float)
    return shape * math.log(scale) - special.gammaln(shape) - (shape + 1) * np.log(x) - scale / x


def log_hyperprior(hyper: MinnesotaHyper, hp: HyperPrior) -> float:
    lp = 0.0
    if hp.estimate["mu"]:
        lp += gamma_logpdf(hyper.mu, hp.mu_shape, hp.mu_scale)
    if hp.estimate["delta"]:
        lp += gamma_logpdf(hyper.delta, hp.delta_shape, hp.delta_scale)
    if hp.estimate["lambda"]:
        lp += gamma_logpdf(hyper.lam, hp.lambda_shape, hp.lambda_scale)
    if hp.estimate["psi"]:
        lp += float(np.sum(invgamma_logpdf(hyper.psi, hp.psi_shape, hp.psi_scale)))
    return float(lp)
