"""Per-frame AMP with Bernoulli-Gaussian local priors.

The local prior on ``x_n`` is ``(1 - pi_n) delta(x) + pi_n Normal(x; xi_n, psi_n)``
and AMP supplies a pseudo-measurement ``phi_n = x_n + Normal(0, c)``.
All threshold functions are vectorized over coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .signal_model import matvec, rmatvec

LOG_CLAMP = 700.0


class AmpDivergedError(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite value in AMP state"):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class LocalPrior:
    """Per-coefficient Bernoulli-Gaussian prior ``(pi, xi, psi)``; fields broadcast."""

    pi: np.ndarray
    xi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.xi = np.asarray(self.xi)
        self.psi = np.asarray(self.psi, dtype=float)
        if np.any(self.psi <= 0):
            raise ValueError("psi must be positive")
        if np.any((self.pi < 0) | (self.pi > 1)):
            raise ValueError("pi must lie in [0, 1]")


@dataclass
class AmpState:
    z: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    c: float
    phi: Optional[np.ndarray] = None
    c_phi: Optional[float] = None  # variance paired with phi in the last thresholding
    iter: int = 0
    history: list = field(default_factory=list, repr=False)

    def copy(self) -> "AmpState":
        return AmpState(self.z.copy(), self.mu.copy(), self.v.copy(), self.c,
                        None if self.phi is None else self.phi.copy(), self.c_phi, self.iter)


def log_likelihood_ratio(phi, c, xi, psi, is_complex=None):
    """``log Normal(phi; 0, c) - log Normal(phi; xi, psi + c)``.

    The inactive-to-active likelihood ratio of a pseudo-measurement.
    """
    phi = np.asarray(phi)
    if is_complex is None:
        is_complex = np.iscomplexobj(phi) or np.iscomplexobj(xi)
    s = psi + c
    if is_complex:
        quad = psi * np.abs(phi) ** 2 + 2 * c * np.real(np.conj(xi) * phi) - c * np.abs(xi) ** 2
        return np.log(s / c) - quad / (c * s)
    quad = psi * phi ** 2 + 2 * c * xi * phi - c * xi ** 2
    return 0.5 * np.log(s / c) - quad / (2 * c * s)


def _prior_log_odds_inactive(pi):
    # log((1 - pi) / pi) with exact limits at 0 and 1
    with np.errstate(divide="ignore"):
        return np.log1p(-pi) - np.log(pi)


def log_gamma(phi, c, prior: LocalPrior, is_complex=None):
    """Clamped ``log gamma``; values beyond +700 become +inf (coefficient forced off)."""
    lg = _prior_log_odds_inactive(prior.pi) + log_likelihood_ratio(phi, c, prior.xi,
                                                                   prior.psi, is_complex)
    lg = np.where(lg > LOG_CLAMP, np.inf, np.maximum(lg, -LOG_CLAMP))
    # exact limits for pi in {0, 1} regardless of the likelihood term
    lg = np.where(prior.pi == 0, np.inf, lg)
    lg = np.where(prior.pi == 1, -np.inf, lg)
    return lg


def gamma(phi, c, prior: LocalPrior, is_complex=None):
    return np.exp(log_gamma(phi, c, prior, is_complex))


def _moments(phi, c, prior, is_complex):
    lg = log_gamma(phi, c, prior, is_complex)
    p_on = expit(-lg)          # 1 / (1 + gamma)
    p_off = expit(lg)          # gamma / (1 + gamma)
    m = (prior.psi * phi + prior.xi * c) / (prior.psi + c)
    F = p_on * m
    G = p_on * (prior.psi * c / (prior.psi + c)) + p_on * p_off * np.abs(m) ** 2
    return F, G


def f_threshold(phi, c, prior: LocalPrior, is_complex=None):
    """Posterior mean of ``x`` given ``phi``."""
    return _moments(phi, c, prior, is_complex)[0]


def g_threshold(phi, c, prior: LocalPrior, is_complex=None):
    """Posterior variance of ``x`` given ``phi``."""
    return _moments(phi, c, prior, is_complex)[1]


def f_prime(phi, c, prior: LocalPrior, is_complex=None):
    return g_threshold(phi, c, prior, is_complex) / c


def init_state(y, prior: LocalPrior, N: int) -> AmpState:
    dtype = np.result_type(y, prior.xi, float)
    psi = np.broadcast_to(prior.psi, (N,))
    return AmpState(z=np.array(y, dtype=dtype), mu=np.zeros(N, dtype=dtype),
                    v=np.zeros(N), c=100.0 * float(np.sum(psi)))


def run_amp(y, A, prior: LocalPrior, sigma_e2: float, I: int = 25,
            init: Optional[AmpState] = None, damping: float = 1.0, tol: float = 1e-8,
            is_complex=None) -> AmpState:
    """Run up to ``I`` AMP iterations on one frame and return the final state.

    ``damping`` is the weight on the new iterate for ``mu`` and ``c`` (1 = undamped).
    Iteration stops early once ``||mu_new - mu||^2 <= tol * ||mu||^2``.
    """
    if I < 1:
        raise ValueError("I must be at least 1")
    M, N = A.shape
    if np.shape(y) != (M,):
        raise ValueError("y length does not match A")
    if is_complex is None:
        is_complex = np.iscomplexobj(y)
    st = init_state(y, prior, N) if init is None else init.copy()
    z, mu, v, c = st.z, st.mu, st.v, st.c
    phi, c_phi = st.phi, st.c_phi
    i = 0
    for i in range(1, I + 1):
        phi = rmatvec(A, z) + mu
        F, G = _moments(phi, c, prior, is_complex)
        c_phi = c
        onsager = np.sum(G) / (c * M)
        c_new = sigma_e2 + np.sum(G) / M
        if damping != 1.0:
            F = damping * F + (1 - damping) * mu
            c_new = damping * c_new + (1 - damping) * c
        z = y - matvec(A, F) + z * onsager
        dmu = np.vdot(F - mu, F - mu).real
        ref = np.vdot(mu, mu).real
        mu, v, c = F, G, float(c_new)
        if not (np.isfinite(c) and np.all(np.isfinite(z)) and np.all(np.isfinite(mu))):
            raise AmpDivergedError(st.iter + i)
        if dmu <= tol * ref:
            break
    return AmpState(z=z, mu=mu, v=v, c=c, phi=phi, c_phi=c_phi, iter=st.iter + i)
