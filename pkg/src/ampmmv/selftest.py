"""Oracle-equivalence checks runnable from the command line."""
from __future__ import annotations

import sys
import time

import numpy as np

from .amp_frame import LocalPrior, f_threshold, g_threshold
from .exact_oracle import enumerate_mmse
from .mmv_engine import taylor_approx
from .oracles import (brute_force_posterior, dense_active_posterior, spike_slab_moments,
                      taylor_reference)
from .signal_model import GenConfig, ModelParams, generate_instance, rho_for_variance
from .sks_oracle import sks_smooth


def _rand_params(rng, lam=0.4):
    a = rng.uniform(0.05, 1.0)
    return ModelParams(lam=lam, zeta=float(rng.normal(scale=0.5)), alpha=a,
                       rho=rho_for_variance(a), sigma_e2=float(rng.uniform(0.01, 0.2)))


def check_sks(rng, trials):
    worst = 0.0
    for i in range(trials):
        T = int(rng.integers(1, 5))
        K = int(rng.integers(1, 5))
        gen = GenConfig(params=_rand_params(rng), N=8, M=int(rng.integers(2, 8)), T=T,
                        beta=float(rng.uniform(0, 1)), seed=int(rng.integers(2**31)),
                        is_complex=bool(i % 2), support_size=K)
        prob, truth, used = generate_instance(gen)
        out = sks_smooth(prob, truth.support, used)
        m, v, _ = dense_active_posterior(prob, truth.support, used)
        s = truth.support
        worst = max(worst, np.max(np.abs(out.theta_hat[s] - m)) / np.max(np.abs(m)),
                    np.max(np.abs(out.theta_cov_diag[s] - v) / v))
    return worst <= 1e-8, f"max relative error {worst:.2e} (tol 1e-8)"


def check_thresholds(rng, trials):
    worst = 0.0
    for i in range(trials * 50):
        cplx = bool(i % 2)
        pi, c, psi = rng.uniform(0.01, 0.99), rng.uniform(0.05, 2), rng.uniform(0.1, 3)
        phi, xi = rng.normal(scale=2), rng.normal()
        if cplx:
            phi, xi = phi + 1j * rng.normal(), xi + 1j * rng.normal()
        prior = LocalPrior(pi, xi, psi)
        m, v = spike_slab_moments(phi, c, pi, xi, psi, cplx)
        worst = max(worst, abs(f_threshold(phi, c, prior, cplx) - m) / abs(m),
                    abs(g_threshold(phi, c, prior, cplx) - v) / v)
    return worst <= 1e-9, f"max relative error {worst:.2e} (tol 1e-9)"


def check_taylor(rng, trials):
    worst = 0.0
    for i in range(trials * 20):
        cplx = bool(i % 2)
        pi, c = rng.uniform(0.01, 0.99), rng.uniform(0.05, 2)
        phi = rng.normal(scale=2) + (1j * rng.normal() if cplx else 0)
        xi, psi = taylor_approx(pi, phi, c, 1e-7, cplx)
        xr, pr = taylor_reference(pi, phi, c, 1e-7, cplx)
        worst = max(worst, abs(psi - pr) / pr, abs(xi - xr) / max(abs(xr), 1e-3))
    return worst <= 1e-3, f"max relative error {worst:.2e} (tol 1e-3)"


def check_enumeration(rng, trials):
    worst = 0.0
    for i in range(max(1, trials // 4)):
        gen = GenConfig(params=_rand_params(rng, lam=0.3), N=5, M=4, T=3, beta=0.5,
                        seed=int(rng.integers(2**31)), is_complex=bool(i % 2))
        prob, _, used = generate_instance(gen)
        x, sp, _ = brute_force_posterior(prob, used)
        res = enumerate_mmse(prob, used)
        worst = max(worst, np.max(np.abs(x - res.x_mmse)), np.max(np.abs(sp - res.support_post)))
    return worst <= 1e-9, f"max absolute error {worst:.2e} (tol 1e-9)"


CHECKS = [
    ("smoother vs dense conditioning", check_sks),
    ("thresholds vs two-hypothesis posterior", check_thresholds),
    ("gaussian collapse vs finite differences", check_taylor),
    ("enumeration vs dense brute force", check_enumeration),
]


def run_selftest(seed: int = 0, trials: int = 20, stream=sys.stdout) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        ok, detail = fn(rng, trials)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} "
              f"[{time.perf_counter() - t0:.2f}s]", file=stream)
    return all_ok
