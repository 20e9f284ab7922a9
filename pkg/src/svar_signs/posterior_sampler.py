"""Conjugate normal-inverse-Wishart updating and independent posterior draws."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, special

from . import _rng
from .core_data import DesignMatrices
from .priors import DummyObs, NIWPrior, augment


class NumericalError(ArithmeticError):
    """A factorization failed on ill-conditioned input."""


def _chol(M: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(M)):
        raise NumericalError(f"Cholesky factorization of {what} failed (non-finite entries)")
    try:
        return linalg.cholesky(M, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"Cholesky factorization of {what} failed (not positive definite)") from None


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class NIWPosterior:
    B_post: np.ndarray
    Omega_post: np.ndarray
    S_post: np.ndarray
    nu_post: float

    @property
    def N(self) -> int:
        return self.B_post.shape[1]

    @property
    def K(self) -> int:
        return self.B_post.shape[0]

    def as_prior(self) -> NIWPrior:
        return NIWPrior(self.B_post, self.Omega_post, self.S_post, self.nu_post)


@dataclass(frozen=True)
class ReducedFormDraw:
    A: np.ndarray
    Sigma: np.ndarray

    @property
    def P(self) -> np.ndarray:
        """Lower Cholesky factor of Sigma."""
        return _chol(self.Sigma, "Sigma")


def niw_update_arrays(prior: NIWPrior, Y: np.ndarray, X: np.ndarray) -> NIWPosterior:
    Y = np.asarray(Y, dtype=float).reshape(-1, prior.N)
    X = np.asarray(X, dtype=float).reshape(-1, prior.K)
    L_om = _chol(prior.Omega, "prior Omega")
    I_K = np.eye(prior.K)
    Om_inv = linalg.cho_solve((L_om, True), I_K)
    precision = _sym(Om_inv + X.T @ X)
    L = _chol(precision, "posterior precision Omega^-1 + X'X")
    rhs = Om_inv @ prior.B_bar + X.T @ Y
    B_post = linalg.cho_solve((L, True), rhs)
    Omega_post = _sym(linalg.cho_solve((L, True), I_K))
    # B_post' (Omega_post^-1) B_post == ||L' B_post||^2
    LB = L.T @ B_post
    S_post = prior.S0 + Y.T @ Y + prior.B_bar.T @ Om_inv @ prior.B_bar - LB.T @ LB
    return NIWPosterior(B_post, Omega_post, _sym(S_post), prior.nu0 + Y.shape[0])


def niw_update(prior: NIWPrior, design: DesignMatrices, dummies: DummyObs | None = None) -> NIWPosterior:
    """Posterior after observing the sample with the dummy rows prepended."""
    if dummies is None:
        Y, X = design.Y, design.X
    else:
        Y, X = augment(design, dummies)
    return niw_update_arrays(prior, Y, X)


def _logdet_pd(M, what):
    return 2.0 * np.sum(np.log(np.diag(_chol(M, what))))


def niw_log_evidence(prior: NIWPrior, Y: np.ndarray, X: np.ndarray) -> float:
    """log p(Y | X) with (A, Sigma) integrated out under the NIW prior."""
    Y = np.asarray(Y, dtype=float).reshape(-1, prior.N)
    T = Y.shape[0]
    if T == 0:
        return 0.0
    N, nu0 = prior.N, prior.nu0
    post = niw_update_arrays(prior, Y, X)
    i = np.arange(1, N + 1)
    return float(
        -0.5 * T * N * math.log(math.pi)
        + np.sum(special.gammaln((T + nu0 + 1 - i) / 2) - special.gammaln((nu0 + 1 - i) / 2))
        + 0.5 * N * (_logdet_pd(post.Omega_post, "posterior Omega") - _logdet_pd(prior.Omega, "prior Omega"))
        + 0.5 * nu0 * _logdet_pd(prior.S0, "prior S0")
        - 0.5 * (nu0 + T) * _logdet_pd(post.S_post, "posterior S")
    )


def draw_reduced_form(posterior: NIWPosterior, rng: np.random.Generator, method: str = "joint") -> ReducedFormDraw:
    """One (A, Sigma) draw; Sigma by the Bartlett decomposition."""
    N, K, nu = posterior.N, posterior.K, posterior.nu_post
    C = _chol(posterior.S_post, "posterior S")
    bart = np.tril(rng.standard_normal((N, N)), -1)
    bart[np.diag_indices(N)] = np.sqrt(rng.chisquare(nu - np.arange(N)))
    R = linalg.solve_triangular(bart, C.T, lower=True)
    Sigma = _sym(R.T @ R)
    L_om = _chol(posterior.Omega_post, "posterior Omega")
    Z = rng.standard_normal((K, N))
    if method == "joint":
        A = posterior.B_post + L_om @ Z @ _chol(Sigma, "Sigma").T
    elif method == "equation":
        A = _equationwise(posterior.B_post, L_om, Sigma, Z)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return ReducedFormDraw(A, Sigma)


def _equationwise(B, L_om, Sigma, Z):
    # column j given columns < j: regression of e_j on e_{<j} under Sigma
    K, N = B.shape
    A = np.empty((K, N))
    dev = np.empty((K, N))
    for j in range(N):
        if j == 0:
            mean, var = B[:, 0], Sigma[0, 0]
        else:
            coef = linalg.solve(Sigma[:j, :j], Sigma[:j, j], assume_a="pos")
            mean = B[:, j] + dev[:, :j] @ coef
            var = Sigma[j, j] - Sigma[j, :j] @ coef
        A[:, j] = mean + math.sqrt(var) * (L_om @ Z[:, j])
        dev[:, j] = A[:, j] - B[:, j]
    return A


def sample_niw(
    posterior: NIWPosterior | Sequence[NIWPosterior],
    count: int,
    seed: int,
    method: str = "joint",
    workers: int = 1,
) -> list[ReducedFormDraw]:
    """``count`` independent draws, draw ``s`` from its own random stream.

    With a sequence of posteriors (one per hyper-parameter draw) draw ``s``
    (1-based) uses posterior ``ceil(s * S_hyper / count)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    posts = [posterior] if isinstance(posterior, NIWPosterior) else list(posterior)
    H = len(posts)

    def one(s):
        post = posts[-(-(s + 1) * H // count) - 1]
        return draw_reduced_form(post, _rng.stream(seed, _rng.POSTERIOR, s), method)

    if workers <= 1:
        return [one(s) for s in range(count)]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(one, range(count)))
