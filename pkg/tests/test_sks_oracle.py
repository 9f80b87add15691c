import numpy as np
import pytest

from ampmmv.metrics import tnmse, to_db
from ampmmv.mmv_engine import SolverConfig, solve
from ampmmv.oracles import dense_active_posterior
from ampmmv.signal_model import GenConfig, MmvProblem, ModelParams, generate_instance
from ampmmv.sks_oracle import active_columns, kalman_smooth, sks_smooth

from conftest import make_gen, make_params


def random_case(rng, cplx=False, beta=None):
    a = rng.uniform(0.05, 1.0)
    p = ModelParams(lam=0.4, zeta=float(rng.normal(scale=0.5)), alpha=a,
                    rho=(2 - a) / a * rng.uniform(0.3, 2.0),
                    sigma_e2=float(rng.uniform(0.01, 0.3)))
    gen = GenConfig(params=p, N=8, M=int(rng.integers(2, 8)), T=int(rng.integers(1, 5)),
                    beta=float(rng.uniform(0, 1)) if beta is None else beta,
                    seed=int(rng.integers(2**31)), is_complex=cplx,
                    support_size=int(rng.integers(1, 5)))
    return generate_instance(gen)


class TestDenseEquivalence:
    def test_spec_instance(self, rng):
        p = make_params(alpha=0.2, zeta=0.3, sigma_e2=0.05)
        prob, truth, used = generate_instance(GenConfig(params=p, N=8, M=5, T=3, seed=8,
                                                        support_size=3, beta=0.3))
        out = sks_smooth(prob, truth.support, used)
        m, v, _ = dense_active_posterior(prob, truth.support, used)
        np.testing.assert_allclose(out.theta_hat[truth.support], m, rtol=1e-8)
        np.testing.assert_allclose(out.theta_cov_diag[truth.support], v, rtol=1e-8)

    @pytest.mark.parametrize("cplx", [False, True])
    def test_random_instances(self, rng, cplx):
        for _ in range(25):
            prob, truth, used = random_case(rng, cplx)
            out = sks_smooth(prob, truth.support, used)
            m, v, ev = dense_active_posterior(prob, truth.support, used)
            s = truth.support
            np.testing.assert_allclose(out.theta_hat[s], m, rtol=1e-8, atol=1e-10 * np.abs(m).max())
            np.testing.assert_allclose(out.theta_cov_diag[s], v, rtol=1e-8)
            assert out.diagnostics["loglik"] == pytest.approx(ev, rel=1e-9)

    def test_inactive_carry_prior(self, rng):
        prob, truth, used = random_case(rng)
        out = sks_smooth(prob, truth.support, used)
        off = ~truth.support
        np.testing.assert_array_equal(out.theta_hat[off], used.zeta)
        np.testing.assert_array_equal(out.theta_cov_diag[off], used.sigma2)
        assert np.all(out.x_hat[off] == 0)
        np.testing.assert_array_equal(out.x_hat[truth.support], out.theta_hat[truth.support])


class TestLimits:
    def test_huge_noise_recovers_prior(self, rng):
        prob, truth, used = random_case(rng)
        p = used.replace(sigma_e2=1e14)
        out = sks_smooth(prob, truth.support, p)
        np.testing.assert_allclose(out.theta_hat, p.zeta, atol=1e-6)
        np.testing.assert_allclose(out.theta_cov_diag, p.sigma2, rtol=1e-6)

    def test_square_inversion(self, rng):
        N = 6
        A = rng.normal(size=(N, N))
        x = rng.normal(size=N)
        prob = MmvProblem([A], [A @ x])
        out = sks_smooth(prob, np.ones(N, bool), make_params(sigma_e2=1e-14, sigma2=4.0))
        np.testing.assert_allclose(out.x_hat[:, 0], np.linalg.solve(A, A @ x), atol=1e-8)

    def test_singular_innovation_is_jittered(self):
        # noiseless and rank deficient: an exactly singular innovation covariance
        H = np.zeros((1, 1, 2, 1))
        res = kalman_smooth(H, np.zeros((1, 2)), 0.5, 1.0, 0.0, 0.0)
        assert res.jittered
        assert np.all(np.isfinite(res.mean))

    def test_empty_support(self, rng):
        prob, _, used = random_case(rng)
        out = sks_smooth(prob, np.zeros(8, bool), used)
        assert np.all(out.x_hat == 0)

    def test_support_length_checked(self, rng):
        prob, _, used = random_case(rng)
        with pytest.raises(ValueError):
            sks_smooth(prob, np.ones(3, bool), used)


class TestInformation:
    def test_variance_ordering(self, rng):
        for _ in range(20):
            prob, truth, used = random_case(rng, beta=0.0)
            out = sks_smooth(prob, truth.support, used)
            s = truth.support
            assert np.all(out.theta_cov_diag[s] <= out.filtered_var[s] + 1e-12)
            assert np.all(out.filtered_var[s] <= used.sigma2 + 1e-12)

    def test_last_frame_smoothed_equals_filtered(self, rng):
        prob, truth, used = random_case(rng)
        out = sks_smooth(prob, truth.support, used)
        np.testing.assert_allclose(out.theta_cov_diag[:, -1], out.filtered_var[:, -1], rtol=1e-12)

    def test_batch_matches_single(self, rng):
        prob, _, used = random_case(rng, beta=0.5)
        Y = np.stack(prob.observations)
        sets = [np.array([0, 3]), np.array([5, 1]), np.array([2, 7])]
        H = np.stack([active_columns(prob, s) for s in sets])
        res = kalman_smooth(H, Y, used.alpha, used.rho, used.zeta, used.sigma_e2)
        for b, idx in enumerate(sets):
            s = np.zeros(8, bool)
            s[idx] = True
            one = sks_smooth(prob, s, used)
            order = np.argsort(idx)
            np.testing.assert_allclose(res.mean[b][:, order].T, one.theta_hat[np.sort(idx)],
                                       rtol=1e-10)
            assert res.loglik[b] == pytest.approx(one.diagnostics["loglik"], rel=1e-12)


class TestLowerBound:
    def test_sks_beats_amp_on_average(self):
        amp, sks = [], []
        for s in range(100):
            prob, truth, used = generate_instance(make_gen(N=60, M=30, T=3, lam=0.1, seed=s))
            if truth.K == 0:
                continue
            summary, _, _ = solve(prob, used, SolverConfig())
            amp.append(tnmse(truth.signals, summary.x_mean))
            sks.append(tnmse(truth.signals, sks_smooth(prob, truth.support, used).x_hat))
        assert to_db(np.mean(sks)) <= to_db(np.mean(amp)) + 0.1
