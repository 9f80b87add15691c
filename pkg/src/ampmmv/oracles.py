"""Independent dense reference computations used by the self-test and the test suite.

Nothing here shares code with the solvers: the smoother is checked against
covariance-form joint-Gaussian conditioning, the thresholds against direct
two-hypothesis pdf evaluation and quadrature, and the Gaussian collapse
against finite differences of the mixture log-density.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

from .signal_model import MmvProblem, ModelParams, as_dense


def chain_covariance(T: int, alpha: float, rho: float) -> np.ndarray:
    """Stationary AR(1) covariance ``sigma^2 (1 - alpha)^|t - s|``."""
    s2 = alpha * rho / (2 - alpha)
    lag = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return s2 * (1 - alpha) ** lag


def dense_active_posterior(problem: MmvProblem, support, params: ModelParams):
    """Posterior mean and marginal variance (each K x T) of the active amplitudes.

    Builds the KT x KT prior covariance, stacks every frame's observations and
    conditions in covariance form.  Also returns the log evidence of all data.
    """
    N, M, T = problem.dims
    idx = np.flatnonzero(np.asarray(support).astype(bool))
    K = idx.size
    cplx = problem.is_complex
    C = np.kron(chain_covariance(T, params.alpha, params.rho), np.eye(K))   # (t, k) ordering
    H = np.zeros((T * M, T * K), dtype=complex if cplx else float)
    for t, A in enumerate(problem.matrices):
        H[t * M:(t + 1) * M, t * K:(t + 1) * K] = as_dense(A)[:, idx]
    y = np.concatenate(problem.observations)
    m0 = np.full(T * K, params.zeta, dtype=H.dtype)
    S = H @ C @ H.conj().T + params.sigma_e2 * np.eye(T * M)
    r = y - H @ m0
    G = np.linalg.solve(S, H @ C).conj().T           # C H^H S^-1
    mean = m0 + G @ r
    cov = C - G @ H @ C
    var = np.real(np.diag(cov))
    logev = gaussian_logpdf(r, S, cplx)
    return mean.reshape(T, K).T, var.reshape(T, K).T, logev


def gaussian_logpdf(r, S, is_complex=False) -> float:
    sign, logdet = np.linalg.slogdet(S)
    quad = float(np.real(np.vdot(r, np.linalg.solve(S, r))))
    n = len(r)
    if is_complex:
        return -n * np.log(np.pi) - logdet - quad
    return -0.5 * (n * np.log(2 * np.pi) + logdet + quad)


def brute_force_posterior(problem: MmvProblem, params: ModelParams):
    """Exact mixture over all supports via :func:`dense_active_posterior` (tiny N only)."""
    N, M, T = problem.dims
    lam = params.lam_vector(N)
    dtype = complex if problem.is_complex else float
    logw, means, sets = [], [], []
    for mask in range(1 << N):
        s = np.array([(mask >> n) & 1 for n in range(N)], dtype=bool)
        with np.errstate(divide="ignore"):
            lp = float(np.sum(np.where(s, np.log(lam), np.log1p(-lam))))
        if s.any():
            mu, _, ev = dense_active_posterior(problem, s, params)
        else:
            mu = np.zeros((0, T))
            ev = gaussian_logpdf(np.concatenate(problem.observations),
                                 params.sigma_e2 * np.eye(T * M), problem.is_complex)
        x = np.zeros((N, T), dtype=dtype)
        x[s] = mu
        logw.append(lp + ev)
        means.append(x)
        sets.append(s)
    logw = np.array(logw)
    w = np.exp(logw - logsumexp(logw))
    x = np.tensordot(w, np.array(means), axes=1)
    s_post = np.tensordot(w, np.array(sets, dtype=float), axes=1)
    return x, s_post, w


def spike_slab_moments(phi, c, pi, xi, psi, is_complex=False):
    """Posterior mean and variance of ``x`` from ``phi = x + noise(c)`` by direct pdf evaluation.

    Complex quantities are handled as two independent real coordinates, each
    carrying half of every variance.
    """
    phi, xi = np.asarray(phi), np.asarray(xi)
    if is_complex:
        def pdf(v, m, s):
            return (stats.norm.pdf(np.real(v), np.real(m), np.sqrt(s / 2))
                    * stats.norm.pdf(np.imag(v), np.imag(m), np.sqrt(s / 2)))
    else:
        def pdf(v, m, s):
            return stats.norm.pdf(v, m, np.sqrt(s))
    w0 = (1 - pi) * pdf(phi, 0.0, c)
    w1 = pi * pdf(phi, xi, psi + c)
    m1 = (psi * phi + c * xi) / (psi + c)
    v1 = psi * c / (psi + c)
    p1 = w1 / (w0 + w1)
    mean = p1 * m1
    second = p1 * (v1 + np.abs(m1) ** 2)
    return mean, second - np.abs(mean) ** 2


def spike_slab_moments_quad(phi, c, pi, xi, psi):
    """Real-field moments by numerical integration of the slab (spike handled exactly)."""
    sd_post = np.sqrt(psi * c / (psi + c))
    center = (psi * phi + c * xi) / (psi + c)
    lo, hi = center - 40 * sd_post, center + 40 * sd_post

    norm = pi / (2 * math.pi * math.sqrt(psi * c))

    def slab(x, k):
        return x ** k * norm * math.exp(-0.5 * (x - xi) ** 2 / psi - 0.5 * (phi - x) ** 2 / c)

    opts = dict(points=[center], epsabs=0.0, epsrel=1e-11, limit=200)
    z1 = integrate.quad(slab, lo, hi, args=(0,), **opts)[0]
    m1 = integrate.quad(slab, lo, hi, args=(1,), **opts)[0]
    m2 = integrate.quad(slab, lo, hi, args=(2,), **opts)[0]
    z = (1 - pi) * stats.norm.pdf(phi, 0.0, np.sqrt(c)) + z1
    mean = m1 / z
    return mean, m2 / z - mean * mean


def mixture_neglog(theta, pi, phi, c, eps, is_complex=False):
    """``-log`` of the repaired two-component message, ``theta`` scalar or array.

    Components ``N(theta; phi/eps, c/eps^2)`` and ``N(theta; phi, c)`` with weights
    ``1 - Omega`` and ``Omega``; the weights include the Jacobian ``eps^d`` of the
    rescaling in ``d`` real dimensions.
    """
    d = 2 if is_complex else 1
    e = eps ** d
    with np.errstate(divide="ignore"):
        log_om = np.log(e * pi) - np.log((1 - pi) + e * pi)
        log_1m = np.log(1 - pi) - np.log((1 - pi) + e * pi)

    def logn(v, m, s):
        q = np.abs(v - m) ** 2
        return -q / s - np.log(np.pi * s) if is_complex else -0.5 * q / s - 0.5 * np.log(2 * np.pi * s)

    return -np.logaddexp(log_1m + logn(theta, phi / eps, c / eps ** 2), log_om + logn(theta, phi, c))


def taylor_reference(pi, phi, c, eps, is_complex=False, h=None):
    """``(xi, psi)`` of the Gaussian matching slope and curvature of the mixture at ``theta = phi``.

    Derivatives along the real axis by central differences; the imaginary part of
    ``xi`` by the same differences along the imaginary axis.
    """
    h = h or 1e-4 * np.sqrt(c)
    f = lambda th: mixture_neglog(th, pi, phi, c, eps, is_complex)  # noqa: E731
    d2 = (f(phi + h) - 2 * f(phi) + f(phi - h)) / h ** 2
    d1 = (f(phi + h) - f(phi - h)) / (2 * h)
    if is_complex:
        psi = 2.0 / d2
        d1i = (f(phi + 1j * h) - f(phi - 1j * h)) / (2 * h)
        xi = (np.real(phi) - 0.5 * psi * d1) + 1j * (np.imag(phi) - 0.5 * psi * d1i)
        return xi, psi
    psi = 1.0 / d2
    return phi - psi * d1, psi


# ---------------------------------------------------------------- EM objectives

def expected_transition_energy(mean, var, lag, alpha, zeta):
    """``sum_{n, t>=2} E|theta^(t) - (1 - alpha) theta^(t-1) - alpha zeta|^2``.

    Expanded as ``E|u|^2 - 2 Re E[u* v] + E|v|^2`` with ``u = theta^(t)`` and
    ``v = (1 - alpha) theta^(t-1) + alpha zeta``; ``lag`` holds ``E[u* theta^(t-1)]``.
    """
    m_u, m_p = mean[:, 1:], mean[:, :-1]
    e_uu = var[:, 1:] + np.abs(m_u) ** 2
    e_pp = var[:, :-1] + np.abs(m_p) ** 2
    e_uv = (1 - alpha) * lag + alpha * zeta * np.conj(m_u)
    e_vv = ((1 - alpha) ** 2 * e_pp + alpha ** 2 * abs(zeta) ** 2
            + 2 * alpha * (1 - alpha) * np.real(np.conj(zeta) * m_p))
    return float(np.sum(e_uu - 2 * np.real(e_uv) + e_vv))


def q_amplitude(mean, var, lag, zeta, alpha, rho, sigma2, include_first=True):
    """Expected log prior of the amplitude chains (complex-normal convention).

    ``sigma2`` is passed explicitly so callers can hold it at its current iterate.
    """
    N, T = mean.shape
    q = 0.0
    if include_first:
        e1 = np.sum(var[:, 0] + np.abs(mean[:, 0] - zeta) ** 2)
        q += -N * np.log(sigma2) - e1 / sigma2
    if T > 1:
        s = alpha * alpha * rho
        q += -N * (T - 1) * np.log(s) - expected_transition_energy(mean, var, lag, alpha, zeta) / s
    return float(q)


def q_support(s_post, lam):
    s = np.asarray(s_post)
    return float(np.sum(s * np.log(lam) + (1 - s) * np.log1p(-lam)))


def q_noise(problem: MmvProblem, x_mean, x_var, sigma_e2):
    """Expected log likelihood of the measurements; uses the exact column norms."""
    N, M, T = problem.dims
    tot = 0.0
    for t, (A, y) in enumerate(zip(problem.matrices, problem.observations)):
        A = as_dense(A)
        r = y - A @ x_mean[:, t]
        tot += float(np.vdot(r, r).real) + float(np.sum(np.sum(np.abs(A) ** 2, axis=0) * x_var[:, t]))
    return -T * M * np.log(sigma_e2) - tot / sigma_e2
