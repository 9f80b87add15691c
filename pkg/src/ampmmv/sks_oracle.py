"""Support-aware Kalman smoother.

Given the true support, the active amplitudes follow a linear-Gaussian state
space model and a Kalman filter plus Rauch-Tung-Striebel smoother yields their
exact posterior.  The core :func:`kalman_smooth` is batched over a leading
axis of candidate supports.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal_model import MmvProblem, ModelParams, as_dense

JITTER = 1e-12


@dataclass
class KalmanResult:
    mean: np.ndarray      # (B, T, k) smoothed means
    var: np.ndarray       # (B, T, k) smoothed marginal variances
    filt_var: np.ndarray  # (B, T, k) filtered marginal variances
    loglik: np.ndarray    # (B,) log p(y_1..T)
    jittered: bool = False


def _herm(X):
    return np.conj(np.swapaxes(X, -1, -2))


def kalman_smooth(H, Y, alpha, rho, zeta, sigma_e2, is_complex=False) -> KalmanResult:
    """Batched Kalman filter / RTS smoother for the isotropic amplitude chain.

    ``H`` has shape ``(B, T, M, k)`` (the active columns of each frame's matrix)
    and ``Y`` shape ``(T, M)``.  The state obeys
    ``theta^(t) = (1 - alpha) theta^(t-1) + alpha zeta + Normal(0, alpha^2 rho)``
    with the stationary prior on ``theta^(1)``.
    """
    B, T, M, k = H.shape
    dtype = complex if is_complex else float
    s2 = alpha * rho / (2 - alpha)
    q = alpha * alpha * rho
    f = 1.0 - alpha
    eye_k = np.eye(k)
    eye_m = np.eye(M)

    m_pred = np.full((B, T, k), zeta, dtype=dtype)
    P_pred = np.empty((B, T, k, k), dtype=dtype)
    m_filt = np.empty((B, T, k), dtype=dtype)
    P_filt = np.empty((B, T, k, k), dtype=dtype)
    loglik = np.zeros(B)
    jittered = False

    m, P = m_pred[:, 0], np.broadcast_to(s2 * eye_k, (B, k, k)).astype(dtype)
    for t in range(T):
        if t > 0:
            m = f * m_filt[:, t - 1] + alpha * zeta
            P = f * f * P_filt[:, t - 1] + q * eye_k
        m_pred[:, t], P_pred[:, t] = m, P
        Ht = H[:, t]
        S = Ht @ P @ _herm(Ht) + sigma_e2 * eye_m
        S = 0.5 * (S + _herm(S))
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            jittered = True
            S = S + JITTER * eye_m
            L = np.linalg.cholesky(S)
        r = Y[t][None, :] - np.einsum("bmk,bk->bm", Ht, m)
        w = np.linalg.solve(L, r[..., None])[..., 0]          # L^-1 r
        logdet = 2 * np.sum(np.log(np.abs(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)
        quad = np.sum(np.abs(w) ** 2, axis=-1)
        if is_complex:
            loglik += -M * np.log(np.pi) - logdet - quad
        else:
            loglik += -0.5 * (M * np.log(2 * np.pi) + logdet + quad)
        # gain K = P H^H S^-1 via two triangular solves
        PHt = P @ _herm(Ht)                                   # (B, k, M)
        X = np.linalg.solve(L, _herm(PHt))                    # L^-1 H P
        Kt = _herm(np.linalg.solve(_herm(L), X))              # (B, k, M)
        m_filt[:, t] = m + np.einsum("bkm,bm->bk", Kt, r)
        Pf = P - Kt @ Ht @ P
        P_filt[:, t] = 0.5 * (Pf + _herm(Pf))

    m_s = m_filt.copy()
    P_s = P_filt.copy()
    for t in range(T - 2, -1, -1):
        # G = P_filt F^T P_pred^-1, with F = f I
        G = f * _herm(np.linalg.solve(P_pred[:, t + 1], P_filt[:, t]))
        m_s[:, t] = m_filt[:, t] + np.einsum("bij,bj->bi", G, m_s[:, t + 1] - m_pred[:, t + 1])
        Ps = P_filt[:, t] + G @ (P_s[:, t + 1] - P_pred[:, t + 1]) @ _herm(G)
        P_s[:, t] = 0.5 * (Ps + _herm(Ps))
    var = np.real(np.diagonal(P_s, axis1=-2, axis2=-1)).copy()
    fvar = np.real(np.diagonal(P_filt, axis1=-2, axis2=-1)).copy()
    return KalmanResult(m_s, var, fvar, loglik, jittered)


def active_columns(problem: MmvProblem, idx: np.ndarray) -> np.ndarray:
    """``(T, M, k)`` stack of the selected columns of every frame's matrix."""
    if problem.shared_matrix:
        A = as_dense(problem.matrices[0])
        return np.broadcast_to(A[:, idx], (len(problem.observations),) + A[:, idx].shape)
    return np.stack([as_dense(A)[:, idx] for A in problem.matrices])


@dataclass
class SksOutput:
    theta_hat: np.ndarray
    theta_cov_diag: np.ndarray
    x_hat: np.ndarray
    filtered_var: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)


def sks_smooth(problem: MmvProblem, support, params: ModelParams) -> SksOutput:
    """Exact MMSE estimate of the amplitudes (and signal) given the true support."""
    N, M, T = problem.dims
    s = np.asarray(support).astype(bool)
    if s.shape != (N,):
        raise ValueError("support length must equal N")
    idx = np.flatnonzero(s)
    dtype = complex if problem.is_complex else float
    theta = np.full((N, T), params.zeta, dtype=dtype)
    var = np.full((N, T), params.sigma2)
    fvar = var.copy()
    diag = {"jittered": False}
    if idx.size:
        H = active_columns(problem, idx)[None]
        res = kalman_smooth(H, np.stack(problem.observations), params.alpha, params.rho,
                            params.zeta, params.sigma_e2, problem.is_complex)
        theta[idx] = res.mean[0].T
        var[idx] = res.var[0].T
        fvar[idx] = res.filt_var[0].T
        diag["jittered"] = res.jittered
        diag["loglik"] = float(res.loglik[0])
    x_hat = np.where(s[:, None], theta, 0)
    return SksOutput(theta, var, x_hat, fvar, diag)
