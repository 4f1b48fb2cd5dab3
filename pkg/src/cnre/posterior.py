"""Surrogate posteriors ``p_w(theta | x) ∝ exp(h_w(theta, x)) p(theta)``.

A :class:`Surrogate` wraps any row-wise log-ratio callable (a trained
:class:`~cnre.nn.RatioNet`, an analytic ratio, or a test stand-in) together
with the task prior.  Sampling uses either rejection from the prior or a
coordinate-wise slice sampler.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, SamplingError, ShapeError
from .tasks import Task

LogRatioFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _as_rows(arr, dim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr[:, None] if dim == 1 else arr[None, :]
    if arr.shape[-1] != dim:
        raise ShapeError(f"expected trailing dimension {dim}, got shape {arr.shape}")
    return arr


class Surrogate:
    """Log-ratio plus prior: everything needed to evaluate and sample ``p_w(theta|x)``.

    Parameters
    ----------
    log_ratio_fn : callable
        ``(theta (N, d_theta), x (N, d_x)) -> (N,)``.
    task : Task
        Supplies the prior sampler, prior density and dimensions.
    """

    def __init__(self, log_ratio_fn: LogRatioFn, task: Task):
        self.log_ratio_fn = log_ratio_fn
        self.task = task

    @classmethod
    def from_net(cls, net, task: Task) -> "Surrogate":
        net.eval()
        return cls(net, task)

    @classmethod
    def analytic(cls, task: Task) -> "Surrogate":
        return cls(task.analytic_log_ratio, task)

    @property
    def dim_theta(self) -> int:
        return self.task.dim_theta

    def log_ratio(self, theta, x) -> np.ndarray:
        theta = _as_rows(theta, self.task.dim_theta)
        x = _as_rows(x, self.task.dim_x)
        if x.shape[0] == 1 and theta.shape[0] != 1:
            x = np.repeat(x, theta.shape[0], axis=0)
        elif theta.shape[0] == 1 and x.shape[0] != 1:
            theta = np.repeat(theta, x.shape[0], axis=0)
        if theta.shape[0] == 0:
            return np.zeros(0)
        return np.asarray(self.log_ratio_fn(theta, x), dtype=float).reshape(-1)

    def log_unnormalized(self, theta, x) -> np.ndarray:
        """``h(theta, x) + log p(theta)``; ``-inf`` off the prior support."""
        theta = _as_rows(theta, self.task.dim_theta)
        lp = self.task.prior_log_prob(theta)
        out = np.full(theta.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = self.log_ratio(theta[ok], x) + lp[ok]
        return out


def log_ratio(surrogate: Surrogate, theta, x) -> np.ndarray:
    return surrogate.log_ratio(theta, x)


@dataclass
class PartitionEstimate:
    """Monte Carlo estimate of ``Z(x) = E_{p(theta)}[exp h(theta, x)]``."""

    x: np.ndarray
    M: int
    z_hat: float
    log_z_hat: float
    stderr: float

    def to_dict(self) -> dict:
        return {
            "x": np.ravel(self.x).tolist(),
            "M": self.M,
            "z_hat": self.z_hat,
            "log_z_hat": self.log_z_hat,
            "stderr": self.stderr,
        }


def estimate_partition(surrogate: Surrogate, x, M: int, rng: np.random.Generator) -> PartitionEstimate:
    """``z_hat = (1/M) sum_m exp h(theta_m, x)`` with ``theta_m`` from the prior.

    The log value is formed with ``logsumexp`` so it stays finite when
    ``exp h`` overflows; ``z_hat`` is then ``inf`` while ``log_z_hat`` is usable.
    """
    if M < 2:
        raise ConfigError("M must be >= 2")
    x = _as_rows(x, surrogate.task.dim_x)[:1]
    theta = surrogate.task.sample_prior(M, rng)
    h = surrogate.log_ratio(theta, x)
    log_z = float(logsumexp(h) - np.log(M))
    shift = np.max(h)
    w = np.exp(h - shift)
    rel_se = np.std(w, ddof=1) / np.mean(w) / np.sqrt(M)
    with np.errstate(over="ignore"):
        z_hat = float(np.exp(log_z))
    stderr = float(z_hat * rel_se) if np.isfinite(z_hat) else float("inf")
    return PartitionEstimate(x=x[0], M=M, z_hat=z_hat, log_z_hat=log_z, stderr=stderr)


def rejection_sample(
    surrogate: Surrogate,
    x,
    n: int,
    rng: np.random.Generator,
    n_probe: int = 10_000,
    safety: float = 1.2,
    min_acceptance: float = 1e-4,
    max_restarts: int = 20,
    chunk: int = 10_000,
) -> Tuple[np.ndarray, float]:
    """Rejection sampling from ``p_w(theta|x)`` with the prior as proposal.

    The envelope is ``safety * max exp h`` over ``n_probe`` prior draws.  If a
    proposal later exceeds it, a warning is issued, the envelope is raised and
    sampling restarts from scratch so every returned draw saw the same bound.

    Returns
    -------
    samples : ndarray, shape (n, d_theta)
    acceptance_rate : float
        Accepted over proposed for the final (restart-free) pass; ``nan`` when
        ``n == 0``.
    """
    d = surrogate.dim_theta
    if n < 0:
        raise ConfigError("n must be >= 0")
    if n == 0:
        return np.zeros((0, d)), float("nan")
    task = surrogate.task
    x = _as_rows(x, task.dim_x)[:1]
    probes = task.sample_prior(n_probe, rng)
    log_env = float(np.max(surrogate.log_ratio(probes, x)) + np.log(safety))

    for _ in range(max_restarts + 1):
        accepted = []
        have = 0
        proposed = 0
        restart = False
        while have < n:
            rate = have / proposed if have else None
            size = chunk if rate is None else int(min(max(1.2 * (n - have) / rate, chunk), 1_000_000))
            theta = task.sample_prior(size, rng)
            h = surrogate.log_ratio(theta, x)
            proposed += size
            top = float(np.max(h))
            if top > log_env:
                warnings.warn(
                    f"log-ratio {top:.4g} exceeded the rejection envelope {log_env:.4g}; "
                    "raising the envelope and restarting",
                    RuntimeWarning,
                    stacklevel=2,
                )
                log_env = top + np.log(safety)
                restart = True
                break
            keep = np.log(rng.random(size)) < h - log_env
            accepted.append(theta[keep])
            have += int(keep.sum())
            if proposed >= 10 / min_acceptance and have / proposed < min_acceptance:
                raise SamplingError(
                    f"acceptance rate {have / proposed:.2e} below {min_acceptance:g}; "
                    "the envelope is too loose or the ratio is degenerate"
                )
        if not restart:
            return np.concatenate(accepted)[:n], have / proposed
    raise SamplingError(f"rejection envelope still exceeded after {max_restarts} restarts")


def _slice_update(logp, theta, cur, j, width, max_steps_out, rng, max_shrink=200):
    """One coordinate update for every chain at once (stepping out + shrinkage)."""
    C = theta.shape[0]
    log_y = cur - rng.exponential(size=C)
    x0 = theta[:, j].copy()
    left = x0 - width * rng.random(C)
    right = left + width
    steps_left = np.floor(max_steps_out * rng.random(C)).astype(int)
    steps_right = max_steps_out - 1 - steps_left

    def at(vals, rows):
        prop = theta[rows].copy()
        prop[:, j] = vals
        return logp(prop)

    active = steps_left > 0
    while np.any(active):
        idx = np.flatnonzero(active)
        above = at(left[idx], idx) > log_y[idx]
        left[idx[above]] -= width
        steps_left[idx] -= 1
        active[idx[~above]] = False
        active &= steps_left > 0
    active = steps_right > 0
    while np.any(active):
        idx = np.flatnonzero(active)
        above = at(right[idx], idx) > log_y[idx]
        right[idx[above]] += width
        steps_right[idx] -= 1
        active[idx[~above]] = False
        active &= steps_right > 0

    pending = np.ones(C, dtype=bool)
    new_lp = cur.copy()
    for _ in range(max_shrink):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        prop = left[idx] + rng.random(idx.size) * (right[idx] - left[idx])
        lp = at(prop, idx)
        ok = lp > log_y[idx]
        theta[idx[ok], j] = prop[ok]
        new_lp[idx[ok]] = lp[ok]
        pending[idx[ok]] = False
        bad = idx[~ok]
        below = prop[~ok] < x0[bad]
        left[bad[below]] = prop[~ok][below]
        right[bad[~below]] = prop[~ok][~below]
    else:
        if np.any(pending):
            raise SamplingError("slice shrinkage did not terminate")
    return new_lp


def slice_sample(
    surrogate: Surrogate,
    x,
    n: int,
    chains: int = 10,
    rng: Optional[np.random.Generator] = None,
    warmup: int = 200,
    thin: int = 1,
    width=None,
    max_steps_out: int = 32,
    init_retries: int = 100,
) -> np.ndarray:
    """Coordinate-wise slice sampling of ``h(theta, x) + log p(theta)``.

    All chains advance together so each density evaluation is one batched
    call.  Chains start from prior draws; a chain whose start has zero density
    is redrawn up to ``init_retries`` times.

    Parameters
    ----------
    width : float or array, optional
        Initial bracket width per coordinate; defaults to the prior std.

    Returns
    -------
    ndarray, shape (n, d_theta)
        Post-warmup draws ordered by iteration, chains interleaved.
    """
    if rng is None:
        raise ConfigError("slice_sample needs an explicit rng")
    d = surrogate.dim_theta
    if n <= 0:
        return np.zeros((0, d))
    if chains < 1 or thin < 1 or warmup < 0:
        raise ConfigError("chains and thin must be >= 1, warmup >= 0")
    task = surrogate.task
    x = _as_rows(x, task.dim_x)[:1]
    widths = np.broadcast_to(
        np.asarray(task.prior_std if width is None else width, dtype=float), (d,)
    )

    def logp(theta):
        return surrogate.log_unnormalized(theta, x)

    theta = task.sample_prior(chains, rng)
    cur = logp(theta)
    for _ in range(init_retries):
        bad = ~np.isfinite(cur)
        if not np.any(bad):
            break
        theta[bad] = task.sample_prior(int(bad.sum()), rng)
        cur[bad] = logp(theta[bad])
    if not np.all(np.isfinite(cur)):
        raise SamplingError(f"no finite starting density after {init_retries} retries")

    per_chain = -(-n // chains)
    draws = np.empty((per_chain, chains, d))
    total = warmup + per_chain * thin
    kept = 0
    for it in range(total):
        for j in range(d):
            cur = _slice_update(logp, theta, cur, j, widths[j], max_steps_out, rng)
        if it >= warmup and (it - warmup) % thin == thin - 1:
            draws[kept] = theta
            kept += 1
    return draws.reshape(-1, d)[:n]


def sample(surrogate: Surrogate, x, n: int, rng: np.random.Generator, method: str = "rejection", **kwargs):
    """Dispatch to :func:`rejection_sample` or :func:`slice_sample`; returns draws only."""
    if method == "rejection":
        return rejection_sample(surrogate, x, n, rng, **kwargs)[0]
    if method == "slice":
        return slice_sample(surrogate, x, n, rng=rng, **kwargs)
    raise ConfigError(f"unknown sampling method {method!r}; expected 'rejection' or 'slice'")
