"""Measurement matrices that drift between frames make each frame more informative.

With N/M = 10 and M/K = 2 a fixed matrix cannot identify the support; a small
innovation (beta = 0.2) per frame already lets AMP-MMV approach the noise level.

    python3 demos/time_varying_matrix.py [trials]
"""
import sys

from ampmmv import GenConfig, ModelParams, rho_for_variance
from ampmmv.bench import SweepSpec, run_sweep

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 5
alpha = 0.01
base = GenConfig(params=ModelParams(lam=0.05, zeta=0.0, alpha=alpha,
                                    rho=rho_for_variance(alpha), sigma_e2=1e-3),
                 N=1000, M=100, T=4, snr_db=25.0)
spec = SweepSpec("beta", [0.0, 0.05, 0.1, 0.2], base, trials=trials,
                 algorithms=("amp-mmv", "sks"), seed=3)
result = run_sweep(spec)
print(f"{'beta':>6} {'AMP-MMV dB':>11} {'SKS dB':>8}")
amp, sks = result.table("amp-mmv"), result.table("sks")
for b in spec.grid:
    print(f"{b:6.2f} {amp[b]:11.2f} {sks[b]:8.2f}")
