import numpy as np
import pytest

from ampmmv.signal_model import GenConfig, ModelParams, rho_for_variance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_params(lam=0.1, alpha=0.1, zeta=0.0, sigma_e2=0.01, sigma2=1.0):
    return ModelParams(lam=lam, zeta=zeta, alpha=alpha, rho=rho_for_variance(alpha, sigma2),
                       sigma_e2=sigma_e2)


def make_gen(N=40, M=20, T=3, lam=0.1, alpha=0.1, snr_db=25.0, seed=0, **kw):
    return GenConfig(params=make_params(lam=lam, alpha=alpha), N=N, M=M, T=T, snr_db=snr_db,
                     seed=seed, **kw)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
