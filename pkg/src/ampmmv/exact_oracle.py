"""Brute-force Bayesian inference by enumerating every support pattern.

Conditioned on a support of size ``k`` the model is linear-Gaussian in the
``kT`` active amplitudes.  Their posterior precision is block tridiagonal in
time; one batched Cholesky factorization of it per support gives both the
evidence and the conditional mean.  Supports of equal size form one batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from .signal_model import MmvProblem, ModelParams, as_dense

DEFAULT_MAX_N = 18


class EnumerationTooLarge(ValueError):
    pass


@dataclass
class EnumResult:
    x_mmse: np.ndarray        # N x T
    support_post: np.ndarray  # N
    log_evidence: np.ndarray  # 2^N, indexed by the support bitmask
    log_weights: np.ndarray   # normalized log posterior weight per bitmask


def chain_precision(T: int, alpha: float, rho: float) -> np.ndarray:
    """T x T precision of one stationary Gauss-Markov amplitude trajectory."""
    if alpha <= 0:
        raise ValueError("alpha must be positive for a proper chain prior")
    f, q = 1.0 - alpha, alpha * alpha * rho
    s2 = alpha * rho / (2 - alpha)
    L = np.zeros((T, T))
    L[0, 0] = 1.0 / s2
    for t in range(1, T):
        L[t - 1, t - 1] += f * f / q
        L[t, t] += 1.0 / q
        L[t - 1, t] = L[t, t - 1] = -f / q
    return L


def _forward_sub(L, b):
    """Solve ``L w = b`` for a batch of lower-triangular ``L`` (B, n, n)."""
    n = L.shape[-1]
    w = np.zeros_like(b)
    for i in range(n):
        w[:, i] = (b[:, i] - np.einsum("bj,bj->b", L[:, i, :i], w[:, :i])) / L[:, i, i]
    return w


def _back_sub_herm(L, w):
    """Solve ``L^H x = w``."""
    n = L.shape[-1]
    x = np.zeros_like(w)
    Lh = np.ascontiguousarray(np.conj(np.swapaxes(L, 1, 2)))
    for i in range(n - 1, -1, -1):
        x[:, i] = (w[:, i] - np.einsum("bj,bj->b", Lh[:, i, i + 1:], x[:, i + 1:])) / Lh[:, i, i]
    return x


def _log_gauss_norm(n_obs, sigma_e2, energy, is_complex):
    if is_complex:
        return -n_obs * np.log(np.pi * sigma_e2) - energy / sigma_e2
    return -0.5 * (n_obs * np.log(2 * np.pi * sigma_e2) + energy / sigma_e2)


def enumerate_mmse(problem: MmvProblem, params: ModelParams, max_N: int = DEFAULT_MAX_N,
                   batch: int = 4096) -> EnumResult:
    """Exact posterior mean and support marginals by summing over all supports."""
    N, M, T = problem.dims
    if N > max_N:
        raise EnumerationTooLarge(f"N={N} exceeds the enumeration cap {max_N} "
                                  f"(2^N supports)")
    if params.sigma_e2 <= 0:
        raise ValueError("enumeration requires a positive noise variance")
    cplx = problem.is_complex
    dtype = complex if cplx else float
    s_e = params.sigma_e2
    lam = params.lam_vector(N)
    zeta = params.zeta
    A = np.stack([as_dense(a) for a in problem.matrices])          # (T, M, N)
    Y = np.stack(problem.observations)                              # (T, M)
    gram = np.einsum("tmi,tmj->tij", np.conj(A), A)                 # (T, N, N)
    aty = np.einsum("tmi,tm->ti", np.conj(A), Y)                    # (T, N)
    lam_c = chain_precision(T, params.alpha, params.rho)
    logdet_chain = np.linalg.slogdet(lam_c)[1]

    with np.errstate(divide="ignore"):
        log_on, log_off = np.log(lam), np.log1p(-lam)
    base_prior = float(np.sum(log_off))
    gain_prior = log_on - log_off

    def factor(cb):
        """Cholesky factor and whitened information vector for a batch of supports."""
        B, k = cb.shape
        G = np.moveaxis(gram[:, cb[:, :, None], cb[:, None, :]], 0, 1)   # (B, T, k, k)
        J = np.empty((B, T * k, T * k), dtype=dtype)
        J[:] = np.kron(lam_c, np.eye(k))
        for t in range(T):
            J[:, t * k:(t + 1) * k, t * k:(t + 1) * k] += G[:, t] / s_e
        # centered information vector H^H (y - H zeta 1) / sigma_e2
        u = (np.moveaxis(aty[:, cb], 0, 1) - zeta * G.sum(axis=-1)) / s_e   # (B, T, k)
        L = np.linalg.cholesky(J)
        return L, _forward_sub(L, u.reshape(B, T * k))

    n_pat = 1 << N
    log_ev = np.empty(n_pat)
    log_prior = np.full(n_pat, base_prior)
    log_ev[0] = _log_gauss_norm(T * M, s_e, float(np.sum(np.abs(Y) ** 2)), cplx)
    groups = []
    for k in range(1, N + 1):
        combos = np.array(list(combinations(range(N), k)), dtype=np.int64)
        masks = np.sum(1 << combos, axis=1)
        groups.append((combos, masks))
        for lo in range(0, len(combos), batch):
            cb = combos[lo:lo + batch]
            L, w = factor(cb)
            logdet_J = 2 * np.sum(np.log(np.abs(np.diagonal(L, axis1=1, axis2=2))), axis=1)
            quad = _centered_energy(A, Y, cb, zeta) / s_e - np.sum(np.abs(w) ** 2, axis=1)
            logdet_S = T * M * np.log(s_e) + logdet_J - k * logdet_chain
            if cplx:
                ll = -T * M * np.log(np.pi) - logdet_S - quad
            else:
                ll = -0.5 * (T * M * np.log(2 * np.pi) + logdet_S + quad)
            idx = masks[lo:lo + batch]
            log_ev[idx] = ll
            with np.errstate(invalid="ignore"):
                log_prior[idx] = base_prior + gain_prior[cb].sum(axis=1)

    log_post = np.where(np.isfinite(log_prior), log_prior + log_ev, -np.inf)
    log_w = log_post - logsumexp(log_post)
    w_all = np.exp(log_w)

    x = np.zeros((N, T), dtype=dtype)
    support_post = np.zeros(N)
    for combos, masks in groups:
        wk = w_all[masks]
        for j in range(combos.shape[1]):
            np.add.at(support_post, combos[:, j], wk)
        # conditional means only where the weight can register in double precision
        keep = wk > 1e-18
        if not np.any(keep):
            continue
        cb = combos[keep]
        L, w = factor(cb)
        mean = zeta + _back_sub_herm(L, w).reshape(len(cb), T, cb.shape[1])
        contrib = wk[keep][:, None, None] * mean                          # (B, T, k)
        for j in range(cb.shape[1]):
            np.add.at(x, (cb[:, j],), contrib[:, :, j])
    return EnumResult(x, np.clip(support_post, 0.0, 1.0), log_ev, log_w)


def _centered_energy(A, Y, cb, zeta):
    """``sum_t ||y_t - zeta * A_t[:, S] 1||^2`` for each support in the batch."""
    if zeta == 0:
        return np.full(len(cb), float(np.sum(np.abs(Y) ** 2)))
    colsum = A[:, :, cb].sum(axis=-1)                                # (T, M, B)
    r = Y[:, :, None] - zeta * colsum
    return np.sum(np.abs(r) ** 2, axis=(0, 1))
