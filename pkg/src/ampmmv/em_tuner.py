"""Expectation-maximization updates for ``{lambda, zeta, alpha, rho, sigma_e2}``.

Each update maximizes the expected complete-data log-likelihood over one
coordinate, holding the others (and the initial-frame variance ``sigma^2``) at
their current values.  The E-step moments come straight from the message
passing posteriors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .mmv_engine import PosteriorSummary
from .signal_model import MmvProblem, ModelParams, matvec

ALPHA_MIN = 1e-6
FLOOR = 1e-12
ALL_PARAMS = ("lam", "zeta", "alpha", "rho", "sigma_e2")


class IdentifiabilityError(ValueError):
    pass


def _pair_moments(post: PosteriorSummary):
    """Sums over (n, t >= 2) of the moments every transition update needs."""
    mu, v, lag = post.theta_mean, post.theta_var, post.theta_lag1
    cur2 = v[:, 1:] + np.abs(mu[:, 1:]) ** 2       # E|theta^(t)|^2
    prev2 = v[:, :-1] + np.abs(mu[:, :-1]) ** 2     # E|theta^(t-1)|^2
    return mu, cur2, prev2, np.real(lag)


def em_update_lambda(post: PosteriorSummary) -> float:
    return float(np.mean(post.s_post))


def em_update_zeta(post: PosteriorSummary, params: ModelParams):
    mu = post.theta_mean
    N, T = mu.shape
    a, rho, s2 = params.alpha, params.rho, params.sigma2
    num = np.sum(mu[:, 0]) / s2
    if T > 1:
        num += np.sum(mu[:, 1:] - (1 - a) * mu[:, :-1]) / (a * rho)
    zeta = num / (N * (T - 1) / rho + N / s2)
    return zeta if np.iscomplexobj(zeta) else float(zeta)


def alpha_coefficients(post: PosteriorSummary, params: ModelParams):
    """The ``(b, c)`` pair of the alpha quadratic ``2N(T-1) a^2 - b a - c = 0``."""
    mu, cur2, prev2, rlag = _pair_moments(post)
    rho, zeta = params.rho, params.zeta
    b = (2 / rho) * np.sum(rlag - np.real(np.conj(mu[:, 1:] - mu[:, :-1]) * zeta) - prev2)
    c = (2 / rho) * np.sum(cur2 + prev2 - 2 * rlag)
    return float(b), float(c)


def _alpha_objective(a, post, params):
    mu, cur2, prev2, rlag = _pair_moments(post)
    N, T = mu.shape
    z = params.zeta
    e = (cur2 + (1 - a) ** 2 * prev2 + a * a * abs(z) ** 2 - 2 * (1 - a) * rlag
         - 2 * a * np.real(np.conj(mu[:, 1:]) * z)
         + 2 * a * (1 - a) * np.real(np.conj(mu[:, :-1]) * z))
    return -N * (T - 1) * np.log(a * a * params.rho) - np.sum(e) / (a * a * params.rho)


def em_update_alpha(post: PosteriorSummary, params: ModelParams) -> float:
    N, T = post.theta_mean.shape
    if T < 2:
        raise IdentifiabilityError("alpha not identifiable from a single frame")
    b, c = alpha_coefficients(post, params)
    n = N * (T - 1)
    disc = b * b + 8 * n * c
    if disc >= 0:
        # the positive root is the maximizer (the roots have opposite signs for c > 0)
        a = (b + np.sqrt(disc)) / (4 * n)
    else:
        res = minimize_scalar(lambda x: -_alpha_objective(x, post, params),
                              bounds=(ALPHA_MIN, 1.0), method="bounded")
        a = res.x
    return float(np.clip(a, ALPHA_MIN, 1.0))


def em_update_rho(post: PosteriorSummary, params: ModelParams) -> float:
    N, T = post.theta_mean.shape
    a, z = params.alpha, params.zeta
    if T < 2:
        raise IdentifiabilityError("rho not identifiable from a single frame")
    if a == 0:
        raise IdentifiabilityError("rho not identifiable under perfect correlation")
    mu, cur2, prev2, rlag = _pair_moments(post)
    e = (cur2 + a * a * abs(z) ** 2 - 2 * (1 - a) * rlag
         - 2 * a * np.real(np.conj(mu[:, 1:]) * z)
         + 2 * a * (1 - a) * np.real(np.conj(mu[:, :-1]) * z)
         + (1 - a) ** 2 * prev2)
    return float(max(np.sum(e) / (a * a * N * (T - 1)), FLOOR))


def em_update_sigma_e2(problem: MmvProblem, post: PosteriorSummary) -> float:
    N, M, T = problem.dims
    total = 0.0
    for t, (A, y) in enumerate(zip(problem.matrices, problem.observations)):
        r = y - matvec(A, post.x_mean[:, t])
        total += float(np.vdot(r, r).real) + float(np.sum(post.x_var[:, t]))
    return max(total / (T * M), FLOOR)


def default_mask(k: int, T: int) -> frozenset:
    """Alternate the coupled alpha/rho pair: alpha on even, rho on odd iterations."""
    mask = {"lam", "zeta", "sigma_e2"}
    if T > 1:
        mask.add("alpha" if k % 2 == 0 else "rho")
    return frozenset(mask)


@dataclass
class EmState:
    params: ModelParams
    k: int = 0
    history: list = field(default_factory=list)
    update_mask: frozenset | None = None


def em_step(problem: MmvProblem, post: PosteriorSummary, state: EmState) -> EmState:
    """Apply one Gauss-Seidel sweep of the masked coordinate updates."""
    T = problem.dims[2]
    mask = state.update_mask if state.update_mask is not None else default_mask(state.k, T)
    p = state.params
    if "lam" in mask:
        p = p.replace(lam=min(em_update_lambda(post), 1 - 1e-9))
    if "zeta" in mask:
        p = p.replace(zeta=em_update_zeta(post, p))
    if "alpha" in mask:
        p = p.replace(alpha=em_update_alpha(post, p))
    if "rho" in mask:
        p = p.replace(rho=em_update_rho(post, p))
    if "sigma_e2" in mask:
        p = p.replace(sigma_e2=em_update_sigma_e2(problem, post))
    history = state.history + [p.to_dict()]
    return EmState(params=p, k=state.k + 1, history=history)


def initial_params(problem: MmvProblem, sigma_e2: float = 1e-3, alpha: float = 0.1,
                   lam: float | None = None) -> ModelParams:
    """Data-driven starting point for EM.

    ``lambda = M / (2N)``, ``zeta = 0`` and a stationary variance that explains
    the measurement energy left after the assumed noise.
    """
    N, M, T = problem.dims
    lam = 0.5 * M / N if lam is None else lam
    lam = min(lam, 0.99)
    y_energy = np.mean([np.vdot(y, y).real for y in problem.observations])
    fro = np.mean([_fro2(A) for A in problem.matrices])
    s2 = (y_energy - M * sigma_e2) / (fro * lam)
    if not s2 > 0:
        s2 = y_energy / (fro * lam)
    rho = s2 * (2 - alpha) / alpha
    return ModelParams(lam=lam, zeta=0.0, alpha=alpha, rho=float(rho), sigma_e2=sigma_e2)


def _fro2(A) -> float:
    if hasattr(A, "to_dense"):
        return float(np.sum(np.abs(A.to_dense()) ** 2))
    return float(np.sum(np.abs(A) ** 2))


class EmTuner:
    """Couples :func:`em_step` to the solver; one step per smoothing pass."""

    def __init__(self, mask_schedule=default_mask):
        self.mask_schedule = mask_schedule

    def start(self, params: ModelParams) -> EmState:
        lam = np.asarray(params.lam)
        if lam.ndim:
            params = params.replace(lam=float(lam.mean()))
        return EmState(params=params, history=[params.to_dict()])

    def step(self, problem, post, state: EmState) -> EmState:
        T = problem.dims[2]
        state.update_mask = self.mask_schedule(state.k, T)
        return em_step(problem, post, state)
