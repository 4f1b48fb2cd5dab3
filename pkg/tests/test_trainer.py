import csv

import numpy as np
import pytest

from cnre.errors import ConfigError
from cnre.losses import zero_logit_loss
from cnre.nn import load_checkpoint
from cnre.tasks import get_task, sample_joint
from cnre.trainer import LOG_COLUMNS, TrainConfig, read_log_csv, train, validate_mi0

FAST = dict(batch_size=64, batches_per_epoch=5, val_batches_per_epoch=2, mi_samples=16)


def zero_fn(theta, x):
    return np.zeros(np.asarray(theta).shape[0])


class TestConfig:
    def test_defaults_match_budget(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 1024 and cfg.max_epochs == 1000
        assert cfg.samples_per_epoch == cfg.simulation_budget == 22528

    def test_budget_too_small(self):
        with pytest.raises(ConfigError):
            TrainConfig(regime="bootstrap", simulation_budget=1000)

    def test_for_budget(self):
        cfg = TrainConfig.for_budget(1000, task="two_moons", K=9)
        assert cfg.batch_size == 45 and cfg.regime == "bootstrap"

    def test_k_too_large_for_bootstrap(self):
        with pytest.raises(ConfigError):
            TrainConfig(regime="bootstrap", batch_size=10, K=6, simulation_budget=1000)

    def test_roundtrip_dict(self):
        cfg = TrainConfig(task="slcp", gamma=2.0, K=3, **FAST)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"bogus": 1})


class TestValidateMI0:
    def test_zero_net(self):
        task = get_task("conjugate_gaussian")
        rng = np.random.default_rng(0)
        assert validate_mi0(zero_fn, sample_joint(task, 100, rng), 10, task, rng) == 0.0

    def test_analytic_ratio(self):
        task = get_task("conjugate_gaussian")
        rng = np.random.default_rng(0)
        v = validate_mi0(task.analytic_log_ratio, sample_joint(task, 10_000, rng), 1000, task, rng)
        assert v == pytest.approx(-0.5 * np.log(2), abs=0.05)

    def test_bounded_by_true_mi(self):
        task = get_task("conjugate_gaussian")
        rng = np.random.default_rng(1)
        store = sample_joint(task, 5000, rng)
        for scale in (0.5, 1.0, 1.5):
            v = validate_mi0(lambda t, x: scale * task.analytic_log_ratio(t, x), store, 200, task, rng)
            assert v >= -0.5 * np.log(2) - 0.02  # MC slack

    def test_comparable_across_gamma_k(self):
        # The zero network has -I0 = 0 for every (gamma, K) while its loss moves.
        task = get_task("conjugate_gaussian")
        rng = np.random.default_rng(0)
        store = sample_joint(task, 50, rng)
        losses = {zero_logit_loss(g, K) for g in (0.5, 1, 4) for K in (1, 3, 10)}
        assert len(losses) == 9
        assert validate_mi0(zero_fn, store, 8, task, rng) == 0.0


class TestTrain:
    def test_zero_epochs(self, tmp_path):
        cfg = TrainConfig(max_epochs=0, **FAST)
        net, rep = train(cfg, out_dir=tmp_path)
        assert rep.train_loss == [] and rep.best_epoch is None
        ck = load_checkpoint(tmp_path / "checkpoint.npz")
        x = np.linspace(-1, 1, 5)[:, None]
        assert np.array_equal(ck.net(x, x), net(x, x))

    def test_learns_conjugate(self):
        cfg = TrainConfig(max_epochs=15, seed=3, **FAST)
        _, rep = train(cfg)
        assert min(rep.val_loss) < np.log(2)
        assert rep.best_val_loss == min(rep.val_loss)

    @pytest.mark.parametrize("regime", ["fresh_joint", "fresh_prior", "bootstrap"])
    def test_deterministic(self, regime):
        cfg = TrainConfig(task="two_moons", regime=regime, max_epochs=2, K=2, gamma=2.0,
                          simulation_budget=1000, **FAST)
        a_net, a = train(cfg)
        b_net, b = train(cfg)
        assert a.train_loss == b.train_loss and a.val_loss == b.val_loss and a.neg_mi0 == b.neg_mi0
        for k, v in a_net.state_dict().items():
            assert np.array_equal(v, b_net.state_dict()[k])

    @pytest.mark.parametrize("variant,K", [("A", 1), ("B", 4), ("C", 4)])
    def test_variants_run(self, variant, K):
        cfg = TrainConfig(task="gaussian_mixture", variant=variant, K=K, regime="bootstrap",
                          max_epochs=2, simulation_budget=500, **FAST)
        _, rep = train(cfg)
        assert len(rep.val_loss) == 2 and np.all(np.isfinite(rep.val_loss))

    def test_standardizer_fit_on_first_batch(self):
        cfg = TrainConfig(task="slcp", regime="bootstrap", max_epochs=0, simulation_budget=448, **FAST)
        net, _ = train(cfg)
        store = sample_joint(get_task("slcp"), 448, np.random.default_rng(np.random.SeedSequence(0).spawn(4)[1]))
        first = store[:64]
        assert np.allclose(net.standardizer.theta_mean, first.theta.mean(axis=0))
        assert np.allclose(net.standardizer.x_std, first.x.std(axis=0))

    def test_patience_stops(self):
        cfg = TrainConfig(max_epochs=50, patience=1, lr=5e-2, **FAST)
        _, rep = train(cfg)
        assert rep.stopped_early and len(rep.val_loss) < 50

    def test_fixed_val_loss(self):
        cfg = TrainConfig(K=3, gamma=5.0, max_epochs=1, fixed_val_loss=True, **FAST)
        _, rep = train(cfg)
        assert rep.val_loss[0] < zero_logit_loss(5.0, 3)  # scored with gamma=1, K=1
        assert rep.val_loss[0] < 0.8

    def test_log_and_artifacts(self, tmp_path):
        cfg = TrainConfig(max_epochs=3, **FAST)
        _, rep = train(cfg, out_dir=tmp_path)
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 4
        back = read_log_csv(tmp_path / "log.csv")
        assert back.val_loss == rep.val_loss and back.best_epoch == rep.best_epoch
        ck = load_checkpoint(tmp_path / "checkpoint.npz")
        assert ck.epoch == rep.best_epoch
        assert ck.metadata["train_config"]["task"] == "conjugate_gaussian"

    def test_fixed_regime_sample_parity(self):
        # Same (B, K) -> same number of samples consumed per epoch whatever the variant.
        counts = set()
        for variant, K in (("A", 1), ("B", 1), ("C", 1)):
            cfg = TrainConfig(variant=variant, K=K, regime="bootstrap", simulation_budget=448, **FAST)
            counts.add(cfg.batches_per_epoch * cfg.batch_size)
        assert counts == {320}
