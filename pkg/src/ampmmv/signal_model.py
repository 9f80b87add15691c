"""Probabilistic signal model, problem containers and synthetic instance generation.

Each coefficient is ``x_n^(t) = s_n * theta_n^(t)`` where ``s_n`` is a Bernoulli
support indicator shared by every frame and ``theta_n^(t)`` is a stationary
first-order Gauss-Markov amplitude process.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np


class ParameterError(ValueError):
    """Raised when model parameters fall outside their domain."""


def steady_state_variance(alpha: float, rho: float) -> float:
    """Stationary variance ``alpha * rho / (2 - alpha)`` of the amplitude process."""
    if rho <= 0:
        raise ParameterError("rho must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        raise ParameterError("degenerate perfectly-correlated process: alpha = 0 has no "
                             "stationary prior variance; supply one explicitly")
    return alpha * rho / (2.0 - alpha)


def rho_for_variance(alpha: float, sigma2: float = 1.0) -> float:
    """Perturbation variance giving stationary variance ``sigma2`` at correlation ``1 - alpha``."""
    return sigma2 * (2.0 - alpha) / alpha


@dataclass(frozen=True)
class ModelParams:
    """Hyperparameters ``{lambda, zeta, alpha, rho, sigma_e2}`` of the signal model.

    ``lam`` may be a scalar or a length-N array of activity probabilities.
    """

    lam: float | np.ndarray
    zeta: complex | float
    alpha: float
    rho: float
    sigma_e2: float

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0) or np.any(lam >= 1):
            raise ParameterError("activity probabilities must lie in [0, 1)")
        if self.rho <= 0:
            raise ParameterError("rho must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must lie in [0, 1]")
        if self.sigma_e2 < 0:
            raise ParameterError("sigma_e2 must be nonnegative")

    @property
    def sigma2(self) -> float:
        return steady_state_variance(self.alpha, self.rho)

    def lam_vector(self, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lam, dtype=float), (n,)).copy()

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        lam = np.asarray(self.lam)
        zeta = complex(self.zeta)
        return {
            "lam": lam.tolist() if lam.ndim else float(lam),
            "zeta": [zeta.real, zeta.imag] if zeta.imag else zeta.real,
            "alpha": float(self.alpha),
            "rho": float(self.rho),
            "sigma_e2": float(self.sigma_e2),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        lam = d["lam"]
        lam = np.asarray(lam, dtype=float) if isinstance(lam, list) else float(lam)
        zeta = d["zeta"]
        zeta = complex(*zeta) if isinstance(zeta, list) else float(zeta)
        return cls(lam=lam, zeta=zeta, alpha=float(d["alpha"]), rho=float(d["rho"]),
                   sigma_e2=float(d["sigma_e2"]))


class LinearOperator:
    """Matrix-free measurement operator defined by a forward and an adjoint transform.

    Counts calls to each transform so that per-iteration cost can be audited.
    """

    def __init__(self, apply: Callable, adjoint: Callable, shape: tuple[int, int],
                 dtype=float):
        self._apply = apply
        self._adjoint = adjoint
        self.shape = tuple(shape)
        self.dtype = np.dtype(dtype)
        self.n_apply = 0
        self.n_adjoint = 0

    @classmethod
    def from_matrix(cls, A: np.ndarray) -> "LinearOperator":
        return cls(lambda v: A @ v, lambda u: A.conj().T @ u, A.shape, A.dtype)

    def matvec(self, v):
        self.n_apply += 1
        return self._apply(v)

    def rmatvec(self, u):
        self.n_adjoint += 1
        return self._adjoint(u)

    def to_dense(self) -> np.ndarray:
        M, N = self.shape
        return np.column_stack([self._apply(e) for e in np.eye(N, dtype=self.dtype)])


def matvec(A, v):
    return A.matvec(v) if isinstance(A, LinearOperator) else A @ v


def rmatvec(A, u):
    return A.rmatvec(u) if isinstance(A, LinearOperator) else A.conj().T @ u


def as_dense(A) -> np.ndarray:
    return A.to_dense() if isinstance(A, LinearOperator) else np.asarray(A)


@dataclass
class MmvProblem:
    """Measurement matrices (or operators) and observations for T frames."""

    matrices: list
    observations: list

    def __post_init__(self):
        if len(self.matrices) == 1 and len(self.observations) > 1:
            self.matrices = list(self.matrices) * len(self.observations)
        if len(self.matrices) != len(self.observations):
            raise ValueError("need one matrix per observation vector")
        if not self.observations:
            raise ValueError("T must be at least 1")
        shape = self.matrices[0].shape
        for A, y in zip(self.matrices, self.observations):
            if A.shape != shape:
                raise ValueError("all measurement matrices must share one shape")
            if np.shape(y) != (shape[0],):
                raise ValueError("observation length must equal the matrix row count")
        kinds = {np.iscomplexobj(y) for y in self.observations}
        kinds |= {np.dtype(A.dtype).kind == "c" for A in self.matrices}
        if len(kinds) > 1:
            raise ValueError("problem mixes real and complex quantities")

    @property
    def dims(self) -> tuple[int, int, int]:
        M, N = self.matrices[0].shape
        return N, M, len(self.observations)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.observations[0])

    @property
    def shared_matrix(self) -> bool:
        first = self.matrices[0]
        return all(A is first for A in self.matrices)

    @property
    def Y(self) -> np.ndarray:
        return np.column_stack(self.observations)


@dataclass
class GroundTruth:
    support: np.ndarray
    thetas: np.ndarray
    signals: np.ndarray

    @property
    def K(self) -> int:
        return int(np.count_nonzero(self.support))


@dataclass
class GenConfig:
    """Synthetic instance recipe.

    ``snr_db`` (when not None) overrides ``params.sigma_e2`` per instance.
    ``support_size`` draws exactly that many active indices uniformly instead of
    independent Bernoulli draws.
    """

    params: ModelParams
    N: int
    M: int
    T: int
    snr_db: Optional[float] = None
    beta: float = 0.0
    matrix_kind: str = "iid-gaussian-unit-columns"
    seed: int = 0
    is_complex: bool = False
    support_size: Optional[int] = None
    operator_factory: Optional[Callable] = field(default=None, repr=False)


def _gaussian(rng, shape, var, is_complex):
    if is_complex:
        s = np.sqrt(var / 2.0)
        return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)
    return np.sqrt(var) * rng.standard_normal(shape)


def innovation_variance(beta: float, M: int) -> float:
    """Entry variance of U so that E||column of (1-beta)A + beta U||^2 = 1."""
    return (1.0 - (1.0 - beta) ** 2) / (beta ** 2 * M)


def generate_matrices(rng, M: int, N: int, T: int, beta: float, is_complex=False) -> list:
    A = _gaussian(rng, (M, N), 1.0 / M, is_complex)
    A /= np.linalg.norm(A, axis=0)
    mats = [A]
    if beta == 0.0:
        return mats * T
    u_var = innovation_variance(beta, M)
    for _ in range(1, T):
        U = _gaussian(rng, (M, N), u_var, is_complex)
        mats.append((1.0 - beta) * mats[-1] + beta * U)
    return mats


def simulate_amplitudes(rng, N: int, T: int, zeta, alpha: float, rho: float,
                        is_complex=False) -> np.ndarray:
    """N x T array of stationary Gauss-Markov trajectories."""
    theta = np.empty((N, T), dtype=complex if is_complex else float)
    theta[:, 0] = zeta + _gaussian(rng, N, steady_state_variance(alpha, rho), is_complex)
    for t in range(1, T):
        w = _gaussian(rng, N, rho, is_complex)
        theta[:, t] = (1 - alpha) * (theta[:, t - 1] - zeta) + alpha * w + zeta
    return theta


def generate_instance(cfg: GenConfig):
    """Draw ``(problem, truth, params_used)`` from the model described by ``cfg``."""
    p = cfg.params
    if cfg.N < 1 or cfg.M < 1 or cfg.T < 1:
        raise ValueError("dimensions must be positive")
    if not 0.0 <= cfg.beta <= 1.0:
        raise ParameterError("beta must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    N, M, T = cfg.N, cfg.M, cfg.T

    if cfg.support_size is not None:
        s = np.zeros(N, dtype=bool)
        s[rng.choice(N, size=cfg.support_size, replace=False)] = True
    else:
        s = rng.random(N) < p.lam_vector(N)
    theta = simulate_amplitudes(rng, N, T, p.zeta, p.alpha, p.rho, cfg.is_complex)
    x = s[:, None] * theta

    if cfg.matrix_kind == "iid-gaussian-unit-columns":
        mats = generate_matrices(rng, M, N, T, cfg.beta, cfg.is_complex)
    elif cfg.matrix_kind == "implicit-operator-hook":
        if cfg.operator_factory is None:
            raise ValueError("implicit-operator-hook requires operator_factory")
        mats = list(cfg.operator_factory(rng, M, N, T))
    else:
        raise ValueError(f"unknown matrix_kind {cfg.matrix_kind!r}")

    clean = [matvec(A, x[:, t]) for t, A in enumerate(mats)]
    sigma_e2 = p.sigma_e2
    if cfg.snr_db is not None:
        if np.isinf(cfg.snr_db) and cfg.snr_db > 0:
            sigma_e2 = 0.0
        else:
            energy = sum(float(np.vdot(u, u).real) for u in clean)
            sigma_e2 = energy / (T * M * 10.0 ** (cfg.snr_db / 10.0))
    ys = [u + _gaussian(rng, M, sigma_e2, cfg.is_complex) if sigma_e2 > 0 else u.copy()
          for u in clean]
    used = p.replace(sigma_e2=float(sigma_e2))
    return MmvProblem(mats, ys), GroundTruth(s, theta, x), used


def spike_slab_prior_density(x, params: ModelParams, n: int = 0, is_complex=False):
    """Return ``(point_mass_weight, continuous_density)`` of the spike-and-slab prior.

    The point mass ``(1 - lambda_n)`` sits at zero; the continuous part is
    ``lambda_n * Normal(x; zeta, sigma^2)``.
    """
    lam = float(np.atleast_1d(params.lam_vector(n + 1))[n])
    s2 = params.sigma2
    d = np.abs(np.asarray(x) - params.zeta) ** 2
    if is_complex:
        pdf = np.exp(-d / s2) / (np.pi * s2)
    else:
        pdf = np.exp(-d / (2 * s2)) / np.sqrt(2 * np.pi * s2)
    return 1.0 - lam, lam * pdf


def stack_matrices(mats: Sequence) -> np.ndarray:
    return np.stack([as_dense(A) for A in mats])
