"""Message passing over the joint-sparse factor graph.

Frames are coupled through the shared support indicators ``s_n`` and the
amplitude chains ``theta_n^(1..T)``.  Each pass runs four phases per frame:
priors *into* the frame, AMP *within* it, refined beliefs *out* of it and
Gaussian messages *across* neighbouring frames.

Gaussian messages are stored in information form (precision, precision-weighted
mean) so an uninformative message is exactly precision 0.  Activity messages
``pi_fwd`` are stored as log-odds, which removes the need for any underflow floor.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .amp_frame import AmpDivergedError, AmpState, LocalPrior, log_likelihood_ratio, run_amp
from .signal_model import MmvProblem, ModelParams, matvec

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    schedule: str = "parallel"
    max_passes: int = 25
    inner_I: int = 25
    epsilon: float = 1e-7
    residual_switch_threshold: float = 10.0
    max_escalations: int = 3
    em_enabled: bool = False
    warm_start: bool = True
    damping: float = 1.0
    tol: float = 1e-8
    pass_tol: float = 1e-8    # relative change in x_mean that ends the pass loop
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3]")
        if self.max_passes < 1:
            raise ValueError("max_passes must be at least 1")
        if self.schedule not in ("serial", "parallel"):
            raise ValueError("schedule must be 'serial' or 'parallel'")


@dataclass
class PosteriorSummary:
    x_mean: np.ndarray
    x_var: np.ndarray
    s_post: np.ndarray
    theta_mean: np.ndarray
    theta_var: np.ndarray
    theta_lag1: np.ndarray  # E[conj(theta^(t)) theta^(t-1) | y], t = 2..T


@dataclass
class Diagnostics:
    records: list = field(default_factory=list)

    def emit(self, **rec):
        self.records.append(rec)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, default=_json_default) + "\n" for r in self.records)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


# ---------------------------------------------------------------- Gaussian collapse

def omega(pi, epsilon, power: int = 2):
    """Mixing weight ``eps^p pi / ((1 - pi) + eps^p pi)`` of the informative component.

    ``power`` is 2 for complex amplitudes and 1 for real ones (the Jacobian of
    ``theta -> eps * theta`` in one real dimension).
    """
    pi = np.asarray(pi, dtype=float)
    e = epsilon ** power
    return e * pi / ((1.0 - pi) + e * pi)


def taylor_approx(pi_bwd, phi, c, epsilon=1e-7, is_complex=None):
    """Single-Gaussian ``(xi, psi)`` collapse of the regularized f -> theta mixture.

    The mixture is ``(1 - Omega) N(theta; phi/eps, c/eps^2) + Omega N(theta; phi, c)``
    and the Gaussian matches the curvature and slope of its negative log-density
    at ``theta = phi``.  Component responsibilities are computed in the log domain,
    so no exponential can overflow.
    """
    phi = np.asarray(phi)
    if is_complex is None:
        is_complex = np.iscomplexobj(phi)
    pi_bwd = np.asarray(pi_bwd, dtype=float)
    eps = epsilon
    k = 1.0 - 1.0 / eps
    b = (eps ** 2 / c) * np.abs(k * phi) ** 2
    d = -(2 * eps ** 2 / c) * k * phi          # d_r + j d_i
    with np.errstate(divide="ignore"):
        lo = -(np.log(pi_bwd) - np.log1p(-pi_bwd))   # log((1 - pi) / pi)
    # log(weight_broad / weight_narrow) evaluated at theta = phi
    if is_complex:
        lr = lo - b
        curv = 0.5 * c * np.real(d) ** 2
    else:
        lr = lo - 0.5 * b
        curv = 0.25 * c * d ** 2
    r = expit(lr)
    r = np.where(pi_bwd == 0, 1.0, np.where(pi_bwd == 1, 0.0, r))
    q = 1.0 - r
    denom = eps ** 2 * r * r + r * q * (eps ** 2 + 1.0 - curv) + q * q
    psi = c / denom
    xi = phi + 0.5 * psi * r * d
    return xi, psi


# ---------------------------------------------------------------- message state

@dataclass
class MessageState:
    """All per-(n, t) messages of the graph (arrays are N x T)."""

    lfwd: np.ndarray          # log-odds of pi_fwd
    pi_bwd: np.ndarray
    prior_xi: np.ndarray      # local prior into each frame
    prior_psi: np.ndarray
    out_prec: np.ndarray      # theta_out in information form
    out_h: np.ndarray
    fwd_prec: np.ndarray      # across_fwd
    fwd_h: np.ndarray
    bwd_prec: np.ndarray      # across_bwd
    bwd_h: np.ndarray
    amp: list
    phi: np.ndarray
    c: np.ndarray
    clamp: Optional[np.ndarray] = None   # known support: forces pi_bar to 0 / 1

    @classmethod
    def initial(cls, N: int, T: int, params: ModelParams, is_complex: bool):
        ctype = complex if is_complex else float
        st = cls(
            lfwd=np.zeros((N, T)), pi_bwd=np.zeros((N, T)),
            prior_xi=np.zeros((N, T), ctype), prior_psi=np.ones((N, T)),
            out_prec=np.zeros((N, T)), out_h=np.zeros((N, T), ctype),
            fwd_prec=np.zeros((N, T)), fwd_h=np.zeros((N, T), ctype),
            bwd_prec=np.zeros((N, T)), bwd_h=np.zeros((N, T), ctype),
            amp=[None] * T, phi=np.zeros((N, T), ctype), c=np.ones(T),
        )
        st.set_prior_boundary(params)
        return st

    def set_prior_boundary(self, params: ModelParams):
        s2 = params.sigma2
        self.fwd_prec[:, 0] = 1.0 / s2
        self.fwd_h[:, 0] = params.zeta / s2

    @property
    def pi_fwd(self) -> np.ndarray:
        return expit(self.lfwd)


def _lam_logit(params: ModelParams, N: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return logit(params.lam_vector(N))


def into_phase(state: MessageState, params: ModelParams, t: int) -> LocalPrior:
    N, T = state.lfwd.shape
    others = state.lfwd.sum(axis=1) - state.lfwd[:, t]
    pi_bar = expit(_lam_logit(params, N) + others)
    if state.clamp is not None:
        pi_bar = state.clamp.astype(float)
    prec = state.fwd_prec[:, t] + state.bwd_prec[:, t]
    h = state.fwd_h[:, t] + state.bwd_h[:, t]
    informative = prec > 0
    safe = np.where(informative, prec, 1.0)
    psi = np.where(informative, 1.0 / safe, params.sigma2)
    xi = np.where(informative, h / safe, params.zeta)
    if t == 0:
        # only the prior factor reaches the first frame: use it without a round trip
        prior_only = state.bwd_prec[:, 0] == 0
        psi = np.where(prior_only, params.sigma2, psi)
        xi = np.where(prior_only, params.zeta, xi)
    state.pi_bwd[:, t] = pi_bar
    state.prior_xi[:, t] = xi
    state.prior_psi[:, t] = psi
    return LocalPrior(pi_bar, xi, psi)


def out_phase(amp_result: AmpState, prior: LocalPrior, epsilon: float, is_complex=None):
    """Return ``(log-odds of pi_fwd, xi_out, psi_out)`` for one frame."""
    phi, c = amp_result.phi, amp_result.c_phi
    # pi_fwd = (1 + (pi/(1-pi)) gamma)^-1 = 1 / (1 + likelihood ratio)
    l = -log_likelihood_ratio(phi, c, prior.xi, prior.psi, is_complex)
    xi, psi = taylor_approx(prior.pi, phi, c, epsilon, is_complex)
    return l, xi, psi


def _store_out(state: MessageState, t: int, l, xi, psi):
    state.lfwd[:, t] = l
    state.out_prec[:, t] = 1.0 / psi
    state.out_h[:, t] = xi / psi


def across_phase_forward(state: MessageState, params: ModelParams, t: int):
    """Propagate the fused belief at ``t`` through the dynamics into ``t + 1``."""
    a, rho, zeta = params.alpha, params.rho, params.zeta
    P = state.fwd_prec[:, t] + state.out_prec[:, t]
    h = state.fwd_h[:, t] + state.out_h[:, t]
    den = (1 - a) ** 2 + a * a * rho * P
    ok = den > 0
    den = np.where(ok, den, 1.0)
    state.fwd_prec[:, t + 1] = np.where(ok, P / den, 0.0)
    state.fwd_h[:, t + 1] = np.where(ok, ((1 - a) * h + a * zeta * P) / den, 0.0)


def across_phase_backward(state: MessageState, params: ModelParams, t: int):
    """Propagate the fused belief at ``t`` backward through the dynamics into ``t - 1``."""
    a, rho, zeta = params.alpha, params.rho, params.zeta
    P = state.bwd_prec[:, t] + state.out_prec[:, t]
    h = state.bwd_h[:, t] + state.out_h[:, t]
    den = 1.0 + a * a * rho * P
    state.bwd_prec[:, t - 1] = (1 - a) ** 2 * P / den
    state.bwd_h[:, t - 1] = (1 - a) * (h - a * zeta * P) / den


def posterior_support(state: MessageState, params: ModelParams) -> np.ndarray:
    N = state.lfwd.shape[0]
    return expit(_lam_logit(params, N) + state.lfwd.sum(axis=1))


def theta_posteriors(state: MessageState, params: ModelParams):
    """Smoothed amplitude means, variances and lag-one cross moments."""
    P = state.fwd_prec + state.out_prec + state.bwd_prec
    h = state.fwd_h + state.out_h + state.bwd_h
    ok = P > 0
    safe = np.where(ok, P, 1.0)
    var = np.where(ok, 1.0 / safe, params.sigma2)
    mean = np.where(ok, h / safe, params.zeta)
    a, rho = params.alpha, params.rho
    # smoother gain of theta^(t-1) on theta^(t), from the belief held before d^(t)
    Pa = state.fwd_prec[:, :-1] + state.out_prec[:, :-1]
    den = (1 - a) ** 2 + a * a * rho * Pa
    gain = np.where(den > 0, (1 - a) / np.where(den > 0, den, 1.0), 0.0)
    lag1 = gain * var[:, 1:] + np.conj(mean[:, 1:]) * mean[:, :-1]
    return mean, var, lag1


def summarize(state: MessageState, params: ModelParams) -> PosteriorSummary:
    x_mean = np.column_stack([s.mu for s in state.amp])
    x_var = np.column_stack([s.v for s in state.amp])
    mean, var, lag1 = theta_posteriors(state, params)
    return PosteriorSummary(x_mean, x_var, posterior_support(state, params), mean, var, lag1)


def residual_energy(problem: MmvProblem, x_hat: np.ndarray) -> float:
    return float(sum(np.sum(np.abs(y - matvec(A, x_hat[:, t])) ** 2)
                     for t, (A, y) in enumerate(zip(problem.matrices, problem.observations))))


# ---------------------------------------------------------------- schedules

def _within_out(problem, state, params, cfg, t, prior, is_complex, pass_idx):
    A, y = problem.matrices[t], problem.observations[t]
    init = state.amp[t] if (cfg.warm_start and state.amp[t] is not None) else None
    try:
        res = run_amp(y, A, prior, params.sigma_e2, cfg.inner_I, init=init,
                      damping=cfg.damping, tol=cfg.tol, is_complex=is_complex)
    except AmpDivergedError as err:
        raise AmpDivergedError(err.iteration,
                               f"AMP diverged in frame {t} on pass {pass_idx}") from err
    state.amp[t] = res
    state.phi[:, t] = res.phi
    state.c[t] = res.c_phi
    _store_out(state, t, *out_phase(res, prior, cfg.epsilon, is_complex))


def parallel_pass(problem, state, params, cfg, pass_idx=0):
    T = len(problem.observations)
    is_complex = problem.is_complex
    priors = [into_phase(state, params, t) for t in range(T)]
    for t in range(T):
        _within_out(problem, state, params, cfg, t, priors[t], is_complex, pass_idx)
    for t in range(T - 1):
        across_phase_forward(state, params, t)
    for t in range(T - 1, 0, -1):
        across_phase_backward(state, params, t)


def serial_pass(problem, state, params, cfg, pass_idx=0):
    T = len(problem.observations)
    is_complex = problem.is_complex
    for t in range(T):
        prior = into_phase(state, params, t)
        _within_out(problem, state, params, cfg, t, prior, is_complex, pass_idx)
        if t < T - 1:
            across_phase_forward(state, params, t)
    for t in range(T - 1, -1, -1):
        if t < T - 1:
            prior = into_phase(state, params, t)
            _within_out(problem, state, params, cfg, t, prior, is_complex, pass_idx)
        if t > 0:
            across_phase_backward(state, params, t)


_PASSES = {"parallel": parallel_pass, "serial": serial_pass}


def _run_schedule(problem, params, cfg, diag, em_hook=None, attempt=0, clamp=None):
    N, M, T = problem.dims
    state = MessageState.initial(N, T, params, problem.is_complex)
    state.clamp = clamp
    run_pass = _PASSES[cfg.schedule]
    prev = None
    summary = None
    em_state = em_hook.start(params) if em_hook else None
    for k in range(cfg.max_passes):
        state.set_prior_boundary(params)
        run_pass(problem, state, params, cfg, k)
        summary = summarize(state, params)
        pf = state.pi_fwd
        if np.any((pf < 0) | (pf > 1)) or np.any((state.pi_bwd < 0) | (state.pi_bwd > 1)):
            raise FloatingPointError("activity message left [0, 1]")
        res = residual_energy(problem, summary.x_mean)
        x = summary.x_mean
        delta = np.inf if prev is None else float(np.sum(np.abs(x - prev) ** 2))
        rec = dict(attempt=attempt, schedule=cfg.schedule, pass_=k, residual=res,
                   delta=delta)
        if em_hook:
            em_state = em_hook.step(problem, summary, em_state)
            params = em_state.params
            rec["params"] = params.to_dict()
        diag.emit(kind="pass", **rec)
        if prev is not None and delta <= cfg.pass_tol * float(np.sum(np.abs(x) ** 2)):
            break
        prev = x.copy()
    if em_hook:
        # refresh the summary so it reflects the final parameter set
        summary = summarize(state, params)
    return summary, state, params, residual_energy(problem, summary.x_mean)


def solve(problem: MmvProblem, params: ModelParams, cfg: Optional[SolverConfig] = None,
          em_hook=None, clamp_support=None):
    """Run AMP-MMV and return ``(summary, diagnostics, final_params)``.

    ``em_hook`` (an :class:`ampmmv.em_tuner.EmTuner`) learns parameters between passes;
    when ``cfg.em_enabled`` is set and no hook is given, the default tuner is used.
    Escalation re-runs with the other schedule and twice the pass budget while the
    residual energy exceeds ``residual_switch_threshold * T * M * sigma_e2``.
    ``clamp_support`` (boolean, length N) fixes every activity prior to the given support.
    """
    cfg = cfg or SolverConfig()
    N, M, T = problem.dims
    if params.lam_vector(N).shape != (N,):
        raise ValueError("lambda does not match N")
    if em_hook is None and cfg.em_enabled:
        from .em_tuner import EmTuner
        em_hook = EmTuner()
    clamp = None
    if clamp_support is not None:
        clamp = np.asarray(clamp_support).astype(bool)
        if clamp.shape != (N,):
            raise ValueError("clamp_support must have length N")
    diag = Diagnostics()
    best = None
    run_cfg = cfg
    for attempt in range(cfg.max_escalations + 1):
        summary, state, p_final, res = _run_schedule(problem, params, run_cfg, diag,
                                                     em_hook, attempt, clamp)
        if best is None or res < best[3]:
            best = (summary, state, p_final, res)
        limit = cfg.residual_switch_threshold * T * M * p_final.sigma_e2
        diag.emit(kind="attempt", attempt=attempt, schedule=run_cfg.schedule,
                  max_passes=run_cfg.max_passes, residual=res, threshold=limit)
        if res <= limit or attempt == cfg.max_escalations:
            break
        other = "serial" if run_cfg.schedule == "parallel" else "parallel"
        run_cfg = SolverConfig(**{**asdict(run_cfg), "schedule": other,
                                  "max_passes": 2 * run_cfg.max_passes})
        diag.emit(kind="escalation", to_schedule=other, max_passes=run_cfg.max_passes)
        log.debug("escalating to %s schedule", other)
    summary, state, p_final, _ = best
    diag.state = state
    return summary, diag, p_final
