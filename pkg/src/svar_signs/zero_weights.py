"""Importance weights for rotations drawn under zero restrictions.

Under zero restrictions the rotation is drawn as a sequence of uniform
directions on nested null-space spheres. That proposal is not the
conditional of the uniform-normal-inverse-Wishart posterior on the
restricted set, measured in structural coordinates ``(A0, A+)`` with
``A0 = P'^{-1} Q`` and ``A+ = A A0``. The correction is

    w = |det A0|^{-(2N+K+1)} / v(A0, A+)

where ``v`` is the volume element of the map from the restricted structural
set to ``(A, vech Sigma, w_1..w_N)`` and ``w_j`` are the sphere coordinates
of the rotation columns.

:func:`log_zero_weight` evaluates ``v`` from exact differentials in
``(A, Sigma, Q)`` tangent coordinates. :func:`log_zero_weight_fd` is an
independent check that differentiates the structural-to-output map
numerically.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .analysis import ma_coefficients
from .identification import RestrictionSet, _zero_rows, null_basis


def _vech_index(N):
    return np.tril_indices(N)


def _phi(X):
    """Lower triangle with halved diagonal (Cholesky differential)."""
    L = np.tril(X)
    idx = np.arange(X.shape[-1])
    L[..., idx, idx] *= 0.5
    return L


def _logdet_gram(M: np.ndarray) -> float:
    # M has full row rank; log det(M M') via QR of M'
    R = np.linalg.qr(M.T, mode="r")
    return float(2.0 * np.sum(np.log(np.abs(np.diag(R)))))


def _point_bases(A, Sigma, Q, restrictions, psi):
    P = np.linalg.cholesky(Sigma)
    zeros = restrictions.zeros_by_shock()
    bases = {}
    done = []
    for j in restrictions.zero_order():
        M = np.vstack([_zero_rows(psi, P, zeros[j])] + [Q[:, [k]].T for k in done])
        bases[j] = null_basis(M, restrictions.N)
        done.append(j)
    return bases


def log_zero_weight(draw, restrictions: RestrictionSet) -> float:
    """Log importance weight of a zero-restricted draw (up to a constant)."""
    A = np.asarray(draw.A, dtype=float)
    Sigma = np.asarray(draw.Sigma, dtype=float)
    Q = np.asarray(draw.Q, dtype=float)
    K, N = A.shape
    p = (K - 1) // N
    zeros = restrictions.zeros_by_shock()
    H0 = max((h for z in zeros for _, h in z), default=0)
    psi = ma_coefficients(A, H0)
    P = np.linalg.cholesky(Sigma)
    Pinv = linalg.solve_triangular(P, np.eye(N), lower=True)

    # unit tangent directions: vec(dA), vech(dSigma), skew(dK)
    rs, cs = _vech_index(N)
    ks, ls = np.tril_indices(N, -1)
    nA, nS, nK = K * N, rs.size, ks.size
    D = nA + nS + nK
    dA = np.zeros((D, K, N))
    dA[np.arange(nA), np.arange(nA) // N, np.arange(nA) % N] = 1.0
    dS = np.zeros((D, N, N))
    o = nA + np.arange(nS)
    dS[o, rs, cs] = 1.0
    dS[o, cs, rs] = 1.0
    dK = np.zeros((D, N, N))
    o = nA + nS + np.arange(nK)
    dK[o, ks, ls] = 1.0
    dK[o, ls, ks] = -1.0

    dP = P @ _phi(Pinv @ dS @ Pinv.T)
    dQ = Q @ dK
    dpsi = np.zeros((D, H0 + 1, N, N))
    for h in range(1, H0 + 1):
        for l in range(1, min(h, p) + 1):
            Al = A[(l - 1) * N : l * N]
            dAl = dA[:, (l - 1) * N : l * N, :]
            dpsi[:, h] += np.swapaxes(dAl, 1, 2) @ psi[h - l] + Al.T @ dpsi[:, h - l]

    cons = []
    for j in range(N):
        q = Q[:, j]
        for v, h in zeros[j]:
            cons.append(dpsi[:, h, v, :] @ (P @ q) + (dP @ q) @ psi[h, v] + dQ[:, :, j] @ (P.T @ psi[h, v]))
    U = linalg.null_space(np.stack(cons)) if cons else np.eye(D)  # D x (D - #zeros)

    A0 = Pinv.T @ Q
    dA0 = -Pinv.T @ np.swapaxes(dP, 1, 2) @ A0 + Pinv.T @ dQ
    dAplus = dA @ A0 + A @ dA0
    W = np.concatenate([dA0.reshape(D, -1), dAplus.reshape(D, -1)], axis=1)

    bases = _point_bases(A, Sigma, Q, restrictions, psi)
    dw = [dQ[:, :, j] @ bases[j] for j in restrictions.zero_order()]
    O = np.concatenate([dA.reshape(D, -1), dS[:, rs, cs]] + dw, axis=1)

    log_v = 0.5 * (_logdet_gram(U.T @ O) - _logdet_gram(U.T @ W))
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(P)))
    return float(0.5 * (2 * N + K + 1) * logdet_sigma - log_v)


def _reduced(x, N, K):
    A0 = x[: N * N].reshape(N, N)
    Aplus = x[N * N :].reshape(K, N)
    A0inv = np.linalg.inv(A0)
    B = Aplus @ A0inv
    Sigma = A0inv.T @ A0inv
    Sigma = 0.5 * (Sigma + Sigma.T)
    P = np.linalg.cholesky(Sigma)
    Q = P.T @ A0
    return B, Sigma, P, Q


def log_zero_weight_fd(draw, restrictions: RestrictionSet, step: float = 1e-6) -> float:
    """Finite-difference version of :func:`log_zero_weight` in ``(A0, A+)`` coordinates."""
    A = np.asarray(draw.A, dtype=float)
    Sigma = np.asarray(draw.Sigma, dtype=float)
    Q = np.asarray(draw.Q, dtype=float)
    K, N = A.shape
    zeros = restrictions.zeros_by_shock()
    H0 = max((h for z in zeros for _, h in z), default=0)
    order = restrictions.zero_order()
    P = np.linalg.cholesky(Sigma)
    A0 = np.linalg.solve(P.T, Q)
    x0 = np.concatenate([A0.reshape(-1), (A @ A0).reshape(-1)])
    rs, cs = _vech_index(N)

    def constraints(x):
        B, _, P_, Q_ = _reduced(x, N, K)
        psi = ma_coefficients(B, H0)
        return np.array([psi[h][v] @ P_ @ Q_[:, j] for j in range(N) for v, h in zeros[j]])

    base_bases = _point_bases(A, Sigma, Q, restrictions, ma_coefficients(A, H0))

    def output(x):
        B, S, P_, Q_ = _reduced(x, N, K)
        psi = ma_coefficients(B, H0)
        parts = [B.reshape(-1), S[rs, cs]]
        done = []
        for j in order:
            M = np.vstack([_zero_rows(psi, P_, zeros[j])] + [Q_[:, [k]].T for k in done])
            Nb = null_basis(M, N)
            # align to the basis at the base point (orthogonal Procrustes)
            u, _, vt = np.linalg.svd(Nb.T @ base_bases[j])
            Nb = Nb @ (u @ vt)
            parts.append(Nb.T @ Q_[:, j])
            done.append(j)
        return np.concatenate(parts)

    def jac(f, directions):
        cols = []
        for d in directions.T:
            cols.append((f(x0 + step * d) - f(x0 - step * d)) / (2 * step))
        return np.stack(cols, axis=1)

    Dim = x0.size
    V = linalg.null_space(jac(constraints, np.eye(Dim))) if any(zeros) else np.eye(Dim)
    J = jac(output, V)
    sign, logdet = np.linalg.slogdet(J.T @ J)
    log_v = 0.5 * logdet
    _, logdet_a0 = np.linalg.slogdet(A0)
    return float(-(2 * N + K + 1) * logdet_a0 - log_v)
