import mpmath
import numpy as np
import pytest

from ampmmv.exact_oracle import EnumerationTooLarge, chain_precision, enumerate_mmse
from ampmmv.oracles import brute_force_posterior, chain_covariance
from ampmmv.signal_model import GenConfig, MmvProblem, ModelParams, generate_instance
from ampmmv.sks_oracle import sks_smooth

from conftest import make_params


def small(seed, N=6, M=4, T=3, lam=0.3, cplx=False, beta=0.4, **kw):
    p = make_params(lam=lam, alpha=0.2, zeta=0.1, sigma_e2=0.05)
    gen = GenConfig(params=p, N=N, M=M, T=T, seed=seed, is_complex=cplx, beta=beta, **kw)
    return generate_instance(gen)


def bits(mask, N):
    return np.array([(mask >> n) & 1 for n in range(N)], dtype=bool)


class TestChainPrecision:
    @pytest.mark.parametrize("T", [1, 2, 5])
    def test_inverse_of_covariance(self, T):
        C = chain_covariance(T, 0.3, 1.7)
        np.testing.assert_allclose(chain_precision(T, 0.3, 1.7) @ C, np.eye(T), atol=1e-12)


class TestExamples:
    def test_zero_activity(self):
        prob, _, used = small(1)
        res = enumerate_mmse(prob, used.replace(lam=0.0))
        np.testing.assert_array_equal(res.x_mmse, 0)
        np.testing.assert_array_equal(res.support_post, 0)

    def test_scalar_two_term(self):
        prob = MmvProblem([np.ones((1, 1))], [np.zeros(1)])
        p = ModelParams(lam=0.5, zeta=0.0, alpha=0.5, rho=3.0, sigma_e2=1.0)   # sigma^2 = 1
        res = enumerate_mmse(prob, p)
        r = 1 / mpmath.sqrt(2)
        assert res.support_post[0] == pytest.approx(float(r / (1 + r)), rel=1e-14)
        assert res.support_post[0] == pytest.approx(0.41421, abs=1e-5)

    def test_expected_support_size(self):
        prob, _, used = small(2, N=7)
        res = enumerate_mmse(prob, used)
        w = np.exp(res.log_weights)
        sizes = np.array([bin(m).count("1") for m in range(1 << 7)])
        assert np.sum(res.support_post) == pytest.approx(float(np.dot(w, sizes)), rel=1e-12)
        assert np.sum(w) == pytest.approx(1.0, rel=1e-13)
        assert np.all((res.support_post >= 0) & (res.support_post <= 1))

    def test_cap(self):
        prob, _, used = small(3, N=19, M=4)
        with pytest.raises(EnumerationTooLarge, match="19"):
            enumerate_mmse(prob, used)
        prob, _, used = small(3, N=6)
        with pytest.raises(EnumerationTooLarge):
            enumerate_mmse(prob, used, max_N=5)

    def test_needs_noise(self):
        prob, _, used = small(4)
        with pytest.raises(ValueError):
            enumerate_mmse(prob, used.replace(sigma_e2=0.0))


class TestAgainstDense:
    @pytest.mark.parametrize("cplx", [False, True])
    @pytest.mark.parametrize("T", [1, 2, 4])
    def test_brute_force(self, cplx, T):
        prob, _, used = small(10 + T, N=5, T=T, cplx=cplx)
        res = enumerate_mmse(prob, used)
        x, sp, w = brute_force_posterior(prob, used)
        np.testing.assert_allclose(res.x_mmse, x, atol=1e-11)
        np.testing.assert_allclose(res.support_post, sp, atol=1e-11)
        np.testing.assert_allclose(np.exp(res.log_weights), w, atol=1e-12)

    def test_per_index_activity(self):
        prob, _, used = small(20, N=5)
        p = used.replace(lam=np.array([0.1, 0.5, 0.9, 0.3, 0.0]))
        res = enumerate_mmse(prob, p)
        _, sp, _ = brute_force_posterior(prob, p)
        np.testing.assert_allclose(res.support_post, sp, atol=1e-11)
        assert res.support_post[4] == 0

    def test_batching_invariant(self):
        prob, _, used = small(21, N=8)
        a = enumerate_mmse(prob, used)
        b = enumerate_mmse(prob, used, batch=7)
        np.testing.assert_allclose(a.x_mmse, b.x_mmse, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.log_evidence, b.log_evidence, rtol=1e-12)


class TestInvariants:
    def test_dominant_support_matches_smoother(self):
        p = ModelParams(lam=0.1, zeta=0.0, alpha=0.1, rho=19.0, sigma_e2=1e-10)
        gen = GenConfig(params=p, N=8, M=8, T=3, seed=5, support_size=2)
        prob, truth, used = generate_instance(gen)
        res = enumerate_mmse(prob, used)
        mask = int(np.sum(truth.support * (1 << np.arange(8))))
        assert np.exp(res.log_weights[mask]) >= 1 - 1e-12
        np.testing.assert_allclose(res.x_mmse, sks_smooth(prob, truth.support, used).x_hat,
                                   rtol=1e-8, atol=1e-10)

    def test_permutation_equivariance(self, rng):
        prob, _, used = small(30, N=7, beta=0.3)
        perm = rng.permutation(7)
        prob_p = MmvProblem([A[:, perm] for A in prob.matrices], prob.observations)
        lam = np.linspace(0.1, 0.6, 7)
        a = enumerate_mmse(prob, used.replace(lam=lam))
        b = enumerate_mmse(prob_p, used.replace(lam=lam[perm]))
        np.testing.assert_allclose(b.x_mmse, a.x_mmse[perm], rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(b.support_post, a.support_post[perm], rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
    def test_amplitude_scale(self, c):
        prob, _, used = small(31, N=6, cplx=True)
        a = enumerate_mmse(prob, used)
        scaled = MmvProblem(prob.matrices, [c * y for y in prob.observations])
        p = used.replace(zeta=c * used.zeta, rho=c * c * used.rho, sigma_e2=c * c * used.sigma_e2)
        b = enumerate_mmse(scaled, p)
        np.testing.assert_allclose(b.support_post, a.support_post, rtol=1e-9, atol=1e-13)
        np.testing.assert_allclose(b.x_mmse / c, a.x_mmse, rtol=1e-9, atol=1e-12)
        # evidences shift by the Jacobian of the rescaled data, identically for every support
        shift = b.log_evidence - a.log_evidence
        np.testing.assert_allclose(shift, shift[0], rtol=1e-9)

    def test_row_scale(self):
        prob, _, used = small(32, N=6)
        c = 7.0
        scaled = MmvProblem([c * A for A in prob.matrices], [c * y for y in prob.observations])
        a = enumerate_mmse(prob, used)
        b = enumerate_mmse(scaled, used.replace(sigma_e2=c * c * used.sigma_e2))
        np.testing.assert_allclose(b.support_post, a.support_post, rtol=1e-10)
        np.testing.assert_allclose(b.x_mmse, a.x_mmse, rtol=1e-9, atol=1e-13)

    def test_deterministic(self):
        prob, _, used = small(33, N=8)
        a, b = enumerate_mmse(prob, used), enumerate_mmse(prob, used)
        np.testing.assert_array_equal(a.x_mmse, b.x_mmse)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)
