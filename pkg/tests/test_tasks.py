import numpy as np
import pytest
from scipy import stats

from cnre.errors import UnsupportedError
from cnre.posterior import Surrogate, rejection_sample, slice_sample
from cnre.tasks import (
    TASKS,
    JointBatch,
    benchmark_observations,
    get_task,
    read_joint_csv,
    sample_joint,
    write_joint_csv,
)

N = 100_000


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.mark.parametrize("name", sorted(TASKS))
def test_dimensions_and_finite_prior_density(name, rng):
    task = get_task(name)
    th = task.sample_prior(50, rng)
    x = task.simulate(th, rng)
    assert th.shape == (50, task.dim_theta)
    assert x.shape == (50, task.dim_x)
    assert np.all(np.isfinite(task.prior_log_prob(th)))
    assert task.prior_std.shape == (task.dim_theta,)


@pytest.mark.parametrize("name,low,high", [("two_moons", -1, 1), ("slcp", -3, 3),
                                           ("gaussian_mixture", -10, 10),
                                           ("gaussian_linear_uniform", -1, 1)])
def test_uniform_prior_support(name, low, high, rng):
    th = get_task(name).sample_prior(10_000, rng)
    assert th.min() >= low and th.max() <= high
    outside = np.full((1, th.shape[1]), high + 0.1)
    assert get_task(name).prior_log_prob(outside)[0] == -np.inf


def test_conjugate_prior_moments(rng):
    th = get_task("conjugate_gaussian").sample_prior(N, rng)[:, 0]
    assert abs(th.mean()) < 3 / np.sqrt(N)
    assert th.var() == pytest.approx(1.0, abs=0.02)


def test_gaussian_linear_noise(rng):
    x = get_task("gaussian_linear").simulate(np.zeros((N, 10)), rng)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * np.sqrt(0.1 / N))
    assert np.allclose(x.var(axis=0), 0.1, rtol=0.03)


def test_conjugate_simulator(rng):
    x = get_task("conjugate_gaussian").simulate(np.full((N, 1), 2.0), rng)[:, 0]
    assert x.mean() == pytest.approx(2.0, abs=4 / np.sqrt(N))
    assert x.var() == pytest.approx(1.0, rel=0.03)


def test_gaussian_mixture_variance(rng):
    # Equal-weight mixture with a shared mean: variance = (1.0 + 0.01) / 2.
    x = get_task("gaussian_mixture").simulate(np.full((N, 2), 1.5), rng)
    assert np.allclose(x.mean(axis=0), 1.5, atol=0.02)
    assert np.allclose(x.var(axis=0), 0.505, rtol=0.03)
    # Mixture kurtosis: E z^4 / (E z^2)^2 = 3 * (1 + 1e-4) / 2 / 0.505^2
    z = x[:, 0] - 1.5
    kurt = np.mean(z**4) / np.mean(z**2) ** 2
    assert kurt == pytest.approx(3 * 0.50005 / 0.505**2, rel=0.1)


def test_sample_joint_empty_and_correlation(rng):
    task = get_task("conjugate_gaussian")
    empty = sample_joint(task, 0, rng)
    assert len(empty) == 0 and empty.theta.shape == (0, 1) and empty.x.shape == (0, 1)
    b = sample_joint(task, N, rng)
    corr = np.corrcoef(b.theta[:, 0], b.x[:, 0])[0, 1]
    assert corr == pytest.approx(1 / np.sqrt(2), abs=0.01)


@pytest.mark.parametrize("name", sorted(TASKS))
def test_sample_joint_replay(name):
    task = get_task(name)
    a = sample_joint(task, 20, np.random.default_rng(3))
    b = sample_joint(task, 20, np.random.default_rng(3))
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.x, b.x)


def test_analytic_log_ratio_values():
    task = get_task("conjugate_gaussian")
    assert task.analytic_log_ratio([[0.0]], [[0.0]])[0] == pytest.approx(0.5 * np.log(2), abs=1e-14)
    # At theta = x = 0 the ratio is sqrt(var_marg / var_lik); sigma=2 -> sqrt(5/4) > 1
    assert get_task("conjugate_gaussian", sigma=2.0).analytic_log_ratio([[0.0]], [[0.0]])[0] > 0
    gl = get_task("gaussian_linear")
    # 10 dims, each contributes log N(0|0,0.1) - log N(0|0,0.2) = 0.5 log 2
    assert gl.analytic_log_ratio(np.zeros((1, 10)), np.zeros((1, 10)))[0] == pytest.approx(5 * np.log(2))


@pytest.mark.parametrize("name", ["two_moons", "slcp", "gaussian_mixture"])
def test_no_analytic_ratio(name):
    task = get_task(name)
    with pytest.raises(UnsupportedError):
        task.analytic_log_ratio(task.sample_prior(2, np.random.default_rng(0)), np.zeros((2, task.dim_x)))


@pytest.mark.parametrize("name", ["conjugate_gaussian", "gaussian_linear", "gaussian_linear_uniform"])
def test_ratio_normalizes_over_prior(name, rng):
    task = get_task(name)
    M = N
    for x in sample_joint(task, 10, rng).x:
        w = np.exp(task.analytic_log_ratio(task.sample_prior(M, rng), x))
        se = w.std(ddof=1) / np.sqrt(M)
        assert abs(w.mean() - 1) < 3 * se + 1e-12


@pytest.mark.parametrize("name", ["gaussian_mixture", "two_moons", "slcp"])
def test_log_likelihood_integrates_to_one(name, rng):
    # Importance estimate of the integral of p(x|theta) over x, proposal = the simulator itself
    # mixed with a broad Gaussian so that a wrong normalization would show.
    task = get_task(name)
    theta = task.sample_prior(1, rng)
    M = 200_000
    x_sim = task.simulate(np.repeat(theta, M, axis=0), rng)
    centre, scale = x_sim.mean(axis=0), 3 * x_sim.std(axis=0)
    x_wide = centre + scale * rng.standard_normal((M, task.dim_x))
    pick = rng.random(M) < 0.5
    xs = np.where(pick[:, None], x_sim, x_wide)
    log_q_wide = stats.norm.logpdf((xs - centre) / scale).sum(axis=1) - np.log(scale).sum()
    log_p = task.log_likelihood(theta, xs)
    log_q = np.logaddexp(log_p, log_q_wide) + np.log(0.5)  # proposal density
    w = np.exp(log_p - log_q)
    assert w.mean() == pytest.approx(1.0, abs=4 * w.std() / np.sqrt(M) + 1e-3)


@pytest.mark.parametrize("name", ["conjugate_gaussian", "gaussian_linear", "gaussian_linear_uniform",
                                  "gaussian_mixture", "two_moons"])
def test_reference_posterior_matches_likelihood_rejection(name, rng):
    # Two independent routes to the posterior: the task's exact sampler and
    # rejection sampling from prior * likelihood.
    task = get_task(name)
    x_o = benchmark_observations(task, 1).x[0]
    n = 20_000
    ref = task.reference_posterior(x_o, n, rng)
    lik = Surrogate(task.log_likelihood, task)
    if name == "gaussian_linear_uniform":
        # Posterior mass is too small under the 10-D box prior for rejection.
        rej = slice_sample(lik, x_o, n, chains=50, rng=rng, warmup=50)
    else:
        rej, _ = rejection_sample(lik, x_o, n, rng)
    se = np.sqrt(ref.var(axis=0) / n + rej.var(axis=0) / n)
    assert np.all(np.abs(ref.mean(axis=0) - rej.mean(axis=0)) < 4.5 * se)
    assert np.allclose(ref.std(axis=0), rej.std(axis=0), rtol=0.05)


def test_two_moons_posterior_is_bimodal():
    task = get_task("two_moons")
    rng = np.random.default_rng(0)
    post = task.reference_posterior(np.zeros(2), 5000, rng)
    # Both branches of |theta_0 + theta_1| are populated.
    s = post.sum(axis=1)
    assert (s > 0.05).mean() > 0.3 and (s < -0.05).mean() > 0.3


def test_csv_roundtrip(tmp_path, rng):
    b = sample_joint(get_task("slcp"), 7, rng)
    path = write_joint_csv(tmp_path / "j.csv", b)
    header = path.read_text().splitlines()[0]
    assert header == ",".join([f"theta_{i}" for i in range(5)] + [f"x_{i}" for i in range(8)])
    back = read_joint_csv(path)
    assert np.array_equal(back.theta, b.theta) and np.array_equal(back.x, b.x)


def test_joint_batch_slicing():
    b = JointBatch(np.arange(6.0).reshape(3, 2), np.arange(3.0)[:, None])
    assert len(b[1:]) == 2
    assert np.array_equal(b[[2]].x, [[2.0]])


def test_benchmark_observations_fixed():
    task = get_task("two_moons")
    a = benchmark_observations(task)
    b = benchmark_observations(task)
    assert len(a) == 10 and np.array_equal(a.x, b.x)
