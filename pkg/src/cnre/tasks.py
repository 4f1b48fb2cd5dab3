"""Toy simulators with priors, likelihoods and (where tractable) exact posteriors.

Task definitions
----------------
``conjugate_gaussian``
    ``theta ~ N(0, 1)``, ``x | theta ~ N(theta, sigma^2)`` (``sigma=1`` by
    default).  Marginal ``N(0, 1 + sigma^2)``; posterior
    ``N(x / (1 + sigma^2), sigma^2 / (1 + sigma^2))``.
``gaussian_linear``
    10-D.  ``theta ~ N(0, 0.1 I)``, ``x | theta ~ N(theta, 0.1 I)``.
``gaussian_linear_uniform``
    10-D.  ``theta ~ U(-1, 1)^10``, ``x | theta ~ N(theta, 0.1 I)``.
``gaussian_mixture``
    2-D.  ``theta ~ U(-10, 10)^2``; ``x`` is drawn with equal probability
    from ``N(theta, I)`` or ``N(theta, 0.01 I)``.
``two_moons``
    2-D.  ``theta ~ U(-1, 1)^2``; ``a ~ U(-pi/2, pi/2)``, ``r ~ N(0.1, 0.01^2)``,
    ``p = (r cos a + 0.25, r sin a)`` and
    ``x = p + (-|theta_0 + theta_1| / sqrt 2, (theta_1 - theta_0) / sqrt 2)``.
    The posterior is a pair of crescents.
``slcp``
    ``theta ~ U(-3, 3)^5``; ``x`` stacks four i.i.d. 2-D Gaussian draws with
    mean ``(theta_0, theta_1)``, scales ``s_1 = theta_2^2``,
    ``s_2 = theta_3^2`` and correlation ``tanh(theta_4)`` (``dim_x = 8``).

All samplers take an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .errors import ShapeError, UnsupportedError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class JointBatch:
    """Rows of ``(theta, x)`` where row ``i`` of ``theta`` generated row ``i`` of ``x``."""

    theta: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.theta.shape[0] != self.x.shape[0]:
            raise ShapeError("theta and x must have the same number of rows")

    def __len__(self) -> int:
        return self.theta.shape[0]

    def __getitem__(self, idx) -> "JointBatch":
        return JointBatch(self.theta[idx], self.x[idx])


def _rows(arr, dim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if dim == 1 else arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ShapeError(f"expected rows of dimension {dim}, got shape {arr.shape}")
    return arr


def _gauss_logpdf(z, var):
    """Isotropic Gaussian log density summed over the last axis."""
    d = z.shape[-1]
    return -0.5 * (np.sum(z * z, axis=-1) / var + d * (LOG_2PI + np.log(var)))


class Task:
    """Prior, simulator and optional references for one inference problem."""

    name = "task"
    dim_theta = 1
    dim_x = 1
    has_analytic_ratio = False
    has_reference_posterior = False

    def sample_prior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def prior_log_prob(self, theta) -> np.ndarray:
        raise NotImplementedError

    @property
    def prior_std(self) -> np.ndarray:
        raise NotImplementedError

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_likelihood(self, theta, x) -> np.ndarray:
        raise UnsupportedError(f"{self.name} has no tractable likelihood")

    def analytic_log_ratio(self, theta, x) -> np.ndarray:
        raise UnsupportedError(f"{self.name} has no analytic likelihood-to-evidence ratio")

    def reference_posterior(self, x_o, n: int, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedError(f"{self.name} has no reference posterior sampler")

    def _pair(self, theta, x) -> Tuple[np.ndarray, np.ndarray]:
        theta = _rows(theta, self.dim_theta)
        x = _rows(x, self.dim_x)
        if x.shape[0] == 1 and theta.shape[0] != 1:
            x = np.broadcast_to(x, (theta.shape[0], self.dim_x))
        elif theta.shape[0] == 1 and x.shape[0] != 1:
            theta = np.broadcast_to(theta, (x.shape[0], self.dim_theta))
        if theta.shape[0] != x.shape[0]:
            raise ShapeError("theta and x rows cannot be broadcast together")
        return theta, x

    def __repr__(self):
        return f"{type(self).__name__}()"


class _UniformBoxPrior:
    low = -1.0
    high = 1.0

    def sample_prior(self, n, rng):
        return rng.uniform(self.low, self.high, size=(n, self.dim_theta))

    def prior_log_prob(self, theta):
        theta = _rows(theta, self.dim_theta)
        inside = np.all((theta >= self.low) & (theta <= self.high), axis=1)
        logp = -self.dim_theta * np.log(self.high - self.low)
        return np.where(inside, logp, -np.inf)

    @property
    def prior_std(self):
        return np.full(self.dim_theta, (self.high - self.low) / np.sqrt(12.0))


class ConjugateGaussian(Task):
    name = "conjugate_gaussian"
    has_analytic_ratio = True
    has_reference_posterior = True

    def __init__(self, sigma: float = 1.0):
        self.sigma = float(sigma)

    def sample_prior(self, n, rng):
        return rng.standard_normal((n, 1))

    def prior_log_prob(self, theta):
        return _gauss_logpdf(_rows(theta, 1), 1.0)

    @property
    def prior_std(self):
        return np.ones(1)

    def simulate(self, theta, rng):
        theta = _rows(theta, 1)
        return theta + self.sigma * rng.standard_normal(theta.shape)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        return _gauss_logpdf(x - theta, self.sigma**2)

    def log_evidence(self, x):
        return _gauss_logpdf(_rows(x, 1), 1.0 + self.sigma**2)

    def analytic_log_ratio(self, theta, x):
        theta, x = self._pair(theta, x)
        return self.log_likelihood(theta, x) - self.log_evidence(x)

    def posterior_moments(self, x_o) -> Tuple[float, float]:
        s2 = self.sigma**2
        return float(np.ravel(x_o)[0]) / (1.0 + s2), s2 / (1.0 + s2)

    def reference_posterior(self, x_o, n, rng):
        mean, var = self.posterior_moments(x_o)
        return mean + np.sqrt(var) * rng.standard_normal((n, 1))

    def mutual_information(self) -> float:
        return 0.5 * np.log1p(1.0 / self.sigma**2)

    def __repr__(self):
        return f"ConjugateGaussian(sigma={self.sigma})"


class GaussianLinear(Task):
    name = "gaussian_linear"
    dim_theta = 10
    dim_x = 10
    has_analytic_ratio = True
    has_reference_posterior = True
    prior_var = 0.1
    noise_var = 0.1

    def sample_prior(self, n, rng):
        return np.sqrt(self.prior_var) * rng.standard_normal((n, self.dim_theta))

    def prior_log_prob(self, theta):
        return _gauss_logpdf(_rows(theta, self.dim_theta), self.prior_var)

    @property
    def prior_std(self):
        return np.full(self.dim_theta, np.sqrt(self.prior_var))

    def simulate(self, theta, rng):
        theta = _rows(theta, self.dim_theta)
        return theta + np.sqrt(self.noise_var) * rng.standard_normal(theta.shape)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        return _gauss_logpdf(x - theta, self.noise_var)

    def analytic_log_ratio(self, theta, x):
        theta, x = self._pair(theta, x)
        return self.log_likelihood(theta, x) - _gauss_logpdf(x, self.prior_var + self.noise_var)

    def reference_posterior(self, x_o, n, rng):
        x_o = _rows(x_o, self.dim_x)[0]
        shrink = self.prior_var / (self.prior_var + self.noise_var)
        var = self.prior_var * self.noise_var / (self.prior_var + self.noise_var)
        return shrink * x_o + np.sqrt(var) * rng.standard_normal((n, self.dim_theta))


class GaussianLinearUniform(_UniformBoxPrior, Task):
    name = "gaussian_linear_uniform"
    dim_theta = 10
    dim_x = 10
    has_analytic_ratio = True
    has_reference_posterior = True
    noise_var = 0.1

    def simulate(self, theta, rng):
        theta = _rows(theta, self.dim_theta)
        return theta + np.sqrt(self.noise_var) * rng.standard_normal(theta.shape)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        return _gauss_logpdf(x - theta, self.noise_var)

    def analytic_log_ratio(self, theta, x):
        theta, x = self._pair(theta, x)
        s = np.sqrt(self.noise_var)
        # p(x) factorizes: per dimension the box-averaged Gaussian mass
        mass = (ndtr((self.high - x) / s) - ndtr((self.low - x) / s)) / (self.high - self.low)
        return self.log_likelihood(theta, x) - np.sum(np.log(mass), axis=1)

    def reference_posterior(self, x_o, n, rng):
        x_o = _rows(x_o, self.dim_x)[0]
        s = np.sqrt(self.noise_var)
        a = (self.low - x_o) / s
        b = (self.high - x_o) / s
        return stats.truncnorm.rvs(a, b, loc=x_o, scale=s, size=(n, self.dim_theta),
                                   random_state=rng)


class GaussianMixture(_UniformBoxPrior, Task):
    name = "gaussian_mixture"
    dim_theta = 2
    dim_x = 2
    has_reference_posterior = True
    low = -10.0
    high = 10.0
    scales = (1.0, 0.1)

    def simulate(self, theta, rng):
        theta = _rows(theta, self.dim_theta)
        pick = rng.random(theta.shape[0]) < 0.5
        scale = np.where(pick, self.scales[0], self.scales[1])[:, None]
        return theta + scale * rng.standard_normal(theta.shape)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        z = x - theta
        comps = [_gauss_logpdf(z, s * s) for s in self.scales]
        return np.logaddexp(*comps) + np.log(0.5)

    def reference_posterior(self, x_o, n, rng):
        # Under a flat prior the posterior is the same two-component mixture
        # centred on x_o, truncated to the prior box.
        x_o = _rows(x_o, self.dim_x)[0]
        out = []
        have = 0
        while have < n:
            m = max(2 * (n - have), 1000)
            pick = rng.random(m) < 0.5
            scale = np.where(pick, self.scales[0], self.scales[1])[:, None]
            cand = x_o + scale * rng.standard_normal((m, self.dim_theta))
            cand = cand[np.isfinite(self.prior_log_prob(cand))]
            out.append(cand)
            have += cand.shape[0]
        return np.concatenate(out)[:n]


class TwoMoons(_UniformBoxPrior, Task):
    name = "two_moons"
    dim_theta = 2
    dim_x = 2
    has_reference_posterior = True
    r_mean = 0.1
    r_std = 0.01

    @staticmethod
    def _shift(theta):
        return np.stack(
            [-np.abs(theta[:, 0] + theta[:, 1]) / np.sqrt(2.0),
             (theta[:, 1] - theta[:, 0]) / np.sqrt(2.0)],
            axis=1,
        )

    def _crescent(self, n, rng):
        a = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
        r = self.r_mean + self.r_std * rng.standard_normal(n)
        return np.stack([r * np.cos(a) + 0.25, r * np.sin(a)], axis=1)

    def simulate(self, theta, rng):
        theta = _rows(theta, self.dim_theta)
        return self._crescent(theta.shape[0], rng) + self._shift(theta)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        q = x - self._shift(theta)
        u = q[:, 0] - 0.25
        rho = np.hypot(u, q[:, 1])
        with np.errstate(divide="ignore"):
            logp = (
                stats.norm.logpdf(rho, self.r_mean, self.r_std)
                - np.log(np.pi)
                - np.log(rho)
            )
        return np.where(u > 0, logp, -np.inf)

    def reference_posterior(self, x_o, n, rng):
        # Invert the simulator: draw the crescent noise, solve for theta on a
        # random branch of |theta_0 + theta_1|, keep solutions inside the box.
        x_o = _rows(x_o, self.dim_x)[0]
        out = []
        have = 0
        while have < n:
            m = max(4 * (n - have), 1000)
            q = x_o - self._crescent(m, rng)
            ok = q[:, 0] <= 0
            s = np.sqrt(2.0) * -q[ok, 0] * rng.choice([-1.0, 1.0], size=ok.sum())
            t = np.sqrt(2.0) * q[ok, 1]
            cand = np.stack([(s - t) / 2, (s + t) / 2], axis=1)
            cand = cand[np.isfinite(self.prior_log_prob(cand))]
            out.append(cand)
            have += cand.shape[0]
        return np.concatenate(out)[:n]


class SLCP(_UniformBoxPrior, Task):
    name = "slcp"
    dim_theta = 5
    dim_x = 8
    low = -3.0
    high = 3.0
    n_draws = 4

    def _moments(self, theta):
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        cov = np.empty((theta.shape[0], 2, 2))
        cov[:, 0, 0] = s1**2
        cov[:, 1, 1] = s2**2
        cov[:, 0, 1] = cov[:, 1, 0] = rho * s1 * s2
        return theta[:, :2], cov

    def simulate(self, theta, rng):
        theta = _rows(theta, self.dim_theta)
        mean, cov = self._moments(theta)
        s1 = np.sqrt(cov[:, 0, 0])
        s2 = np.sqrt(cov[:, 1, 1])
        rho = np.tanh(theta[:, 4])
        z = rng.standard_normal((theta.shape[0], self.n_draws, 2))
        x0 = mean[:, None, 0] + s1[:, None] * z[..., 0]
        x1 = mean[:, None, 1] + s2[:, None] * (
            rho[:, None] * z[..., 0] + np.sqrt(1.0 - rho[:, None] ** 2) * z[..., 1]
        )
        return np.stack([x0, x1], axis=-1).reshape(theta.shape[0], self.dim_x)

    def log_likelihood(self, theta, x):
        theta, x = self._pair(theta, x)
        mean, cov = self._moments(theta)
        pts = x.reshape(-1, self.n_draws, 2) - mean[:, None, :]
        det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv00 = cov[:, 1, 1] / det
            inv11 = cov[:, 0, 0] / det
            inv01 = -cov[:, 0, 1] / det
            maha = (
                inv00[:, None] * pts[..., 0] ** 2
                + 2 * inv01[:, None] * pts[..., 0] * pts[..., 1]
                + inv11[:, None] * pts[..., 1] ** 2
            )
            out = -0.5 * np.sum(maha, axis=1) - self.n_draws * (LOG_2PI + 0.5 * np.log(det))
        return np.where(np.isfinite(out), out, -np.inf)


TASKS = {
    cls.name: cls
    for cls in (ConjugateGaussian, GaussianLinear, GaussianLinearUniform,
                GaussianMixture, TwoMoons, SLCP)
}


def get_task(name: str, **kwargs) -> Task:
    try:
        return TASKS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown task {name!r}; available: {sorted(TASKS)}") from None


def sample_prior(task: Task, n: int, rng: np.random.Generator) -> np.ndarray:
    return task.sample_prior(n, rng)


def simulate(task: Task, theta, rng: np.random.Generator) -> np.ndarray:
    return task.simulate(theta, rng)


def sample_joint(task: Task, n: int, rng: np.random.Generator) -> JointBatch:
    """``n`` dependent pairs: prior draws passed through the simulator."""
    theta = task.sample_prior(n, rng)
    return JointBatch(theta, task.simulate(theta, rng))


def analytic_log_ratio(task: Task, theta, x) -> np.ndarray:
    return task.analytic_log_ratio(theta, x)


def benchmark_observations(task: Task, n_obs: int = 10, seed: int = 1000) -> JointBatch:
    """Fixed observations ``(theta_o, x_o)`` used for posterior comparisons.

    Derived from a seed dedicated to observations so every run compares
    against the same set.
    """
    rng = np.random.default_rng([seed, sum(map(ord, task.name))])
    return sample_joint(task, n_obs, rng)


def write_joint_csv(path, batch: JointBatch) -> Path:
    """CSV with header ``theta_0..theta_{d-1},x_0..x_{d-1}`` and full float precision."""
    path = Path(path)
    d_t = batch.theta.shape[1]
    d_x = batch.x.shape[1]
    header = ",".join([f"theta_{i}" for i in range(d_t)] + [f"x_{i}" for i in range(d_x)])
    data = np.concatenate([batch.theta, batch.x], axis=1)
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def read_joint_csv(path) -> JointBatch:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        data = np.zeros((0, len(header)))
    cols_t = [i for i, h in enumerate(header) if h.startswith("theta_")]
    cols_x = [i for i, h in enumerate(header) if h.startswith("x_")]
    return JointBatch(data[:, cols_t], data[:, cols_x])


def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV with a header row as a 2-D array."""
    return np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)


def write_matrix_csv(path, array, prefix: str = "theta") -> Path:
    array = np.atleast_2d(array)
    header = ",".join(f"{prefix}_{i}" for i in range(array.shape[1]))
    np.savetxt(Path(path), array, delimiter=",", header=header, comments="", fmt="%.17g")
    return Path(path)


def task_info(task: Task) -> Dict[str, object]:
    return {
        "name": task.name,
        "dim_theta": task.dim_theta,
        "dim_x": task.dim_x,
        "analytic_ratio": task.has_analytic_ratio,
        "reference_posterior": task.has_reference_posterior,
    }
