"""How far is AMP-MMV from exact Bayesian inference on a problem small enough to enumerate?

    python3 demos/small_exact.py [trials]
"""
import sys

import numpy as np

from ampmmv import (GenConfig, ModelParams, SolverConfig, enumerate_mmse, generate_instance,
                    rho_for_variance, sks_smooth, solve, tnmse)
from ampmmv.metrics import to_db

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20
alpha = 0.05
p = ModelParams(lam=2 / 16, zeta=0.0, alpha=alpha, rho=rho_for_variance(alpha), sigma_e2=1e-3)
err = {"AMP-MMV": [], "exact MMSE": [], "SKS": []}
for seed in range(trials):
    prob, truth, used = generate_instance(
        GenConfig(params=p, N=16, M=12, T=3, snr_db=25, seed=seed, support_size=2))
    summary, _, _ = solve(prob, used, SolverConfig())
    err["AMP-MMV"].append(tnmse(truth.signals, summary.x_mean))
    err["exact MMSE"].append(tnmse(truth.signals, enumerate_mmse(prob, used).x_mmse))
    err["SKS"].append(tnmse(truth.signals, sks_smooth(prob, truth.support, used).x_hat))
for name, v in err.items():
    print(f"{name:11s} {to_db(np.mean(v)):7.2f} dB")
