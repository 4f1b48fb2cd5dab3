import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnre.diagnostics import (
    c2st,
    importance_diagnostic,
    mi_bounds,
    nreb_illposedness_demo,
    roc_from_scores,
    run_diagnostics,
)
from cnre.errors import ConfigError, DiagnosticError, ShapeError
from cnre.posterior import Surrogate
from cnre.tasks import get_task

HALF_LOG2 = 0.5 * np.log(2)


@pytest.fixture(scope="module")
def conj():
    return get_task("conjugate_gaussian")


def zero_fn(theta, x):
    return np.zeros(np.asarray(theta).shape[0])


class TestRoc:
    def test_perfect_and_random(self):
        y = np.array([0, 0, 1, 1])
        assert roc_from_scores(y, np.array([0.1, 0.2, 0.8, 0.9])).auc == 1.0
        rep = roc_from_scores(y, np.array([0.5, 0.5, 0.5, 0.5]))
        assert rep.auc == 0.5

    def test_monotone_curve(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 500)
        rep = roc_from_scores(y, rng.random(500) + 0.3 * y, sample_weight=rng.random(500))
        assert np.all(np.diff(rep.fpr) >= 0) and np.all(np.diff(rep.tpr) >= 0)
        assert rep.auc == pytest.approx(np.trapezoid(rep.tpr, rep.fpr))


class TestImportanceDiagnostic:
    def test_analytic_ratio_passes(self, conj):
        rep = importance_diagnostic(conj.analytic_log_ratio, 0.5, conj, 2000, np.random.default_rng(0))
        assert 0.45 <= rep.auc <= 0.55

    def test_biased_ratio_fails(self, conj):
        biased = lambda t, x: conj.analytic_log_ratio(t, x) + x[:, 0]  # noqa: E731
        rep = importance_diagnostic(biased, 0.5, conj, 2000, np.random.default_rng(0))
        assert rep.auc > 0.7

    def test_power_check(self, conj):
        rep = importance_diagnostic(zero_fn, 1.5, conj, 2000, np.random.default_rng(0), weighted=False)
        assert rep.auc > 0.6 and not rep.weighted

    def test_degenerate_weights(self, conj):
        dead = lambda t, x: np.full(t.shape[0], -np.inf)  # noqa: E731
        with pytest.raises(DiagnosticError):
            importance_diagnostic(dead, 0.0, conj, 200, np.random.default_rng(0))

    def test_minimum_size(self, conj):
        with pytest.raises(ConfigError):
            importance_diagnostic(zero_fn, 0.0, conj, 50, np.random.default_rng(0))

    def test_accepts_surrogate(self, conj):
        rep = importance_diagnostic(Surrogate.analytic(conj), -0.3, conj, 400, np.random.default_rng(1))
        assert 0.0 <= rep.auc <= 1.0 and len(rep.roc_points()) > 2


class TestMIBounds:
    def test_zero(self, conj):
        rep = mi_bounds(zero_fn, conj, 50, 10, np.random.default_rng(0))
        assert rep.i0_hat == 0.0 and rep.i1_hat == 0.0

    def test_analytic(self, conj):
        rep = mi_bounds(conj.analytic_log_ratio, conj, 10_000, 1000, np.random.default_rng(0))
        assert rep.i0_hat == pytest.approx(HALF_LOG2, abs=0.05)
        assert rep.i0_hat >= rep.i1_hat

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(-20, 20), shift=st.floats(-30, 30),
           N=st.integers(2, 30), M=st.integers(2, 30))
    def test_i0_never_below_i1(self, seed, scale, shift, N, M):
        task = get_task("conjugate_gaussian")
        rng = np.random.default_rng(seed)
        fn = lambda t, x: scale * t[:, 0] * x[:, 0] + shift + rng.normal(size=t.shape[0])  # noqa: E731
        rep = mi_bounds(fn, task, N, M, rng)
        assert rep.i0_hat >= rep.i1_hat

    def test_requires_two(self, conj):
        with pytest.raises(ConfigError):
            mi_bounds(zero_fn, conj, 1, 5, np.random.default_rng(0))


class TestC2ST:
    def test_same_distribution(self):
        rng = np.random.default_rng(0)
        acc = c2st(rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2)), rng)
        assert 0.45 <= acc <= 0.55

    def test_disjoint(self):
        rng = np.random.default_rng(0)
        acc = c2st(rng.normal(size=(500, 1)), rng.normal(10, 1, size=(500, 1)), rng)
        assert acc > 0.99

    def test_shape_checks(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError):
            c2st(np.zeros((600, 2)), np.zeros((600, 3)), rng)
        with pytest.raises(ShapeError):
            c2st(np.zeros((600, 2)), np.zeros((700, 2)), rng)
        with pytest.raises(ConfigError):
            c2st(np.zeros((10, 2)), np.zeros((10, 2)), rng)

    def test_symmetric(self):
        # Swapping the sides changes labels only; accuracies agree within CV noise.
        rng = np.random.default_rng(3)
        a = rng.normal(size=(600, 2))
        b = rng.normal(0.3, 1.2, size=(600, 2))
        ab = [c2st(a, b, np.random.default_rng(s)) for s in range(3)]
        ba = [c2st(b, a, np.random.default_rng(s)) for s in range(3)]
        assert abs(np.mean(ab) - np.mean(ba)) < 0.02


class TestIllPosedness:
    def test_constant_bias(self, conj):
        w1, w2, diff = nreb_illposedness_demo(conj.analytic_log_ratio, lambda x: np.ones(len(x)),
                                              0.3, conj, 100, np.random.default_rng(0))
        assert diff == pytest.approx(0.0, abs=1e-15)
        assert w1.sum() == pytest.approx(1.0)

    def test_exp_bias(self, conj):
        _, _, diff = nreb_illposedness_demo(conj.analytic_log_ratio, lambda x: np.exp(x[:, 0]),
                                            0.3, conj, 100, np.random.default_rng(0))
        assert diff > 0.01

    def test_single_sample(self, conj):
        w1, w2, diff = nreb_illposedness_demo(conj.analytic_log_ratio, lambda x: np.exp(x[:, 0]),
                                              0.3, conj, 1, np.random.default_rng(0))
        assert w1[0] == 1.0 and w2[0] == 1.0 and diff == 0.0


def test_run_diagnostics_report(conj):
    rng = np.random.default_rng(0)
    s = Surrogate.analytic(conj)
    ref = [(np.array([0.5]), rng.normal(0.25, np.sqrt(0.5), (500, 1)), rng.normal(0.25, np.sqrt(0.5), (500, 1)))]
    rep = run_diagnostics(s, rng, n_x=3, M=1000, n_per_class=200, mi_N=100, mi_M=20, reference=ref)
    d = json.loads(json.dumps(rep.to_dict()))
    for key in ("auc", "roc_points", "i0_hat", "i1_hat", "z_hat_stats", "c2st"):
        assert key in d
    assert len(d["z_hat_stats"]["values"]) == 3
    assert d["i0_hat"] >= d["i1_hat"]
