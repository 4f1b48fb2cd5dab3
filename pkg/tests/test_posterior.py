import numpy as np
import pytest
from scipy import stats

from cnre.errors import ConfigError, SamplingError
from cnre.nn import RatioNet
from cnre.posterior import Surrogate, estimate_partition, log_ratio, rejection_sample, sample, slice_sample
from cnre.tasks import get_task


@pytest.fixture
def conj():
    return get_task("conjugate_gaussian")


def const_fn(c):
    return lambda theta, x: np.full(np.asarray(theta).shape[0], float(c))


class TestLogRatio:
    def test_zero_net(self, conj):
        net = RatioNet(1, 1, hidden_units=4, n_blocks=1, rng=np.random.default_rng(0), zero_output=True)
        s = Surrogate.from_net(net, conj)
        assert np.all(log_ratio(s, np.linspace(-2, 2, 9), [0.3]) == 0.0)

    def test_deterministic_and_broadcast(self, conj):
        net = RatioNet(1, 1, hidden_units=4, n_blocks=1, rng=np.random.default_rng(0))
        s = Surrogate.from_net(net, conj)
        th = np.linspace(-2, 2, 9)[:, None]
        a = s.log_ratio(th, [0.3])
        b = s.log_ratio(th, np.full((9, 1), 0.3))
        assert np.array_equal(a, b) and np.array_equal(a, s.log_ratio(th, [0.3]))

    def test_hand_weights(self, conj):
        net = RatioNet(1, 1, hidden_units=2, n_blocks=0, rng=np.random.default_rng(0))
        net.input.W[:] = [[1.0, 0.0], [0.0, 1.0]]
        net.input.b[:] = [0.0, 0.0]
        net.output.W[:] = [[2.0], [-1.0]]
        net.output.b[:] = [0.5]
        s = Surrogate.from_net(net, conj)
        # no blocks: h = [theta, x] @ W_in @ W_out + b = 2 theta - x + 0.5
        assert s.log_ratio([[1.5]], [[0.25]])[0] == pytest.approx(2 * 1.5 - 0.25 + 0.5, abs=1e-15)

    def test_unnormalized_outside_support(self):
        tm = get_task("two_moons")
        s = Surrogate(const_fn(0.0), tm)
        assert s.log_unnormalized([[2.0, 0.0]], [0.0, 0.0])[0] == -np.inf


class TestPartition:
    def test_zero(self, conj):
        est = estimate_partition(Surrogate(const_fn(0.0), conj), [1.0], 100, np.random.default_rng(0))
        assert est.z_hat == 1.0 and est.stderr == 0.0

    def test_constant(self, conj):
        est = estimate_partition(Surrogate(const_fn(0.7), conj), [1.0], 100, np.random.default_rng(0))
        assert est.z_hat == pytest.approx(np.exp(0.7), rel=1e-12)

    def test_analytic_normalized(self, conj):
        rng = np.random.default_rng(0)
        s = Surrogate.analytic(conj)
        for x in rng.normal(0, np.sqrt(2), size=5):
            est = estimate_partition(s, [x], 100_000, rng)
            assert abs(est.z_hat - 1) < 3 * est.stderr

    def test_overflow_uses_log(self, conj):
        est = estimate_partition(Surrogate(const_fn(1000.0), conj), [0.0], 10, np.random.default_rng(0))
        assert est.z_hat == np.inf and est.log_z_hat == pytest.approx(1000.0)

    def test_requires_two_samples(self, conj):
        with pytest.raises(ConfigError):
            estimate_partition(Surrogate(const_fn(0.0), conj), [0.0], 1, np.random.default_rng(0))


class TestRejection:
    def test_zero_ratio_gives_prior(self, conj):
        draws, rate = rejection_sample(Surrogate(const_fn(0.0), conj), [0.0], 10_000, np.random.default_rng(0))
        ks = stats.kstest(draws[:, 0], "norm")
        assert ks.statistic < 1.36 / np.sqrt(10_000)
        assert rate == pytest.approx(1 / 1.2, abs=0.02)

    def test_conjugate_posterior(self, conj):
        draws, _ = rejection_sample(Surrogate.analytic(conj), [2.0], 20_000, np.random.default_rng(1))
        assert draws.mean() == pytest.approx(1.0, abs=0.02)
        assert draws.var() == pytest.approx(0.5, abs=0.02)

    def test_empty(self, conj):
        draws, _ = rejection_sample(Surrogate.analytic(conj), [2.0], 0, np.random.default_rng(0))
        assert draws.shape == (0, 1)

    def test_degenerate_ratio_aborts(self, conj):
        # Posterior width ~2e-5: acceptance under the prior is ~2e-5 even with a tight envelope.
        spike = lambda t, x: -1e9 * t[:, 0] ** 2  # noqa: E731
        with pytest.raises(SamplingError), pytest.warns(RuntimeWarning):
            rejection_sample(Surrogate(spike, conj), [0.0], 100, np.random.default_rng(0))

    def test_envelope_rescale_warns(self, conj):
        # Sharp peak missed by a tiny probe set: the envelope must be raised.
        peak = lambda t, x: -200 * (t[:, 0] - 0.3) ** 2  # noqa: E731
        with pytest.warns(RuntimeWarning, match="envelope"):
            draws, _ = rejection_sample(Surrogate(peak, conj), [0.0], 2000, np.random.default_rng(3), n_probe=5)
        assert draws.mean() == pytest.approx(0.3, abs=0.01)


class TestSlice:
    def test_zero_ratio_gives_prior(self, conj):
        draws = slice_sample(Surrogate(const_fn(0.0), conj), [0.0], 10_000, chains=20, rng=np.random.default_rng(0))
        assert draws.shape == (10_000, 1)
        assert abs(draws.mean()) < 0.05 and draws.var() == pytest.approx(1.0, abs=0.06)

    def test_conjugate_posterior(self, conj):
        draws = slice_sample(Surrogate.analytic(conj), [2.0], 10_000, chains=20, rng=np.random.default_rng(0))
        assert draws.mean() == pytest.approx(1.0, abs=0.04)
        assert draws.var() == pytest.approx(0.5, abs=0.04)

    def test_bad_init(self, conj):
        never = lambda t, x: np.full(t.shape[0], -np.inf)  # noqa: E731
        with pytest.raises(SamplingError):
            slice_sample(Surrogate(never, conj), [0.0], 10, rng=np.random.default_rng(0), init_retries=3)

    def test_bounded_prior(self):
        tm = get_task("two_moons")
        lik = Surrogate(tm.log_likelihood, tm)
        x_o = tm.simulate(np.array([[0.2, 0.4]]), np.random.default_rng(0))
        draws = slice_sample(lik, x_o, 2000, chains=20, rng=np.random.default_rng(1))
        assert np.all(np.abs(draws) <= 1)

    @pytest.mark.parametrize("name", ["conjugate_gaussian", "gaussian_mixture", "two_moons"])
    def test_rejection_and_slice_agree(self, name):
        # Same target through two samplers; first two moments within 4 combined SE.
        task = get_task(name)
        rng = np.random.default_rng(7)
        x_o = task.simulate(task.sample_prior(1, rng), rng)
        s = Surrogate(task.log_likelihood, task)
        n = 10_000
        a, _ = rejection_sample(s, x_o, n, rng)
        b = slice_sample(s, x_o, n, chains=50, rng=rng)
        # Slice draws are autocorrelated: inflate their SE by the integrated
        # autocorrelation time estimated from the spread of per-chain means.
        b_chains = b.reshape(-1, 50, task.dim_theta)
        length = b_chains.shape[0]
        tau = b_chains.mean(axis=0).var(axis=0) * length / b.var(axis=0)
        ess_factor = max(1.0, float(np.max(tau)))
        se_mean = np.sqrt(a.var(axis=0) / n + ess_factor * b.var(axis=0) / n)
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se_mean)
        se_var = np.sqrt(2 * a.var(axis=0) ** 2 / n * (1 + ess_factor) + np.var((a - a.mean(0)) ** 2, axis=0) / n)
        assert np.all(np.abs(a.var(axis=0) - b.var(axis=0)) < 4 * se_var)

    def test_dispatch(self, conj):
        rng = np.random.default_rng(0)
        s = Surrogate.analytic(conj)
        assert sample(s, [0.0], 5, rng, method="slice", warmup=5).shape == (5, 1)
        assert sample(s, [0.0], 5, rng).shape == (5, 1)
        with pytest.raises(ConfigError):
            sample(s, [0.0], 5, rng, method="mcmc")
