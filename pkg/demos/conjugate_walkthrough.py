"""Train a ratio estimator on the conjugate Gaussian task and inspect it.

Run ``python demos/conjugate_walkthrough.py [epochs]``.  The task has a closed
form ratio, so every stage can be checked against the truth: the learned
logits, the partition function and posterior samples.
"""

import sys

import numpy as np

from cnre.posterior import Surrogate, estimate_partition, rejection_sample
from cnre.tasks import get_task
from cnre.trainer import TrainConfig, train


def main(epochs: int = 30) -> None:
    task = get_task("conjugate_gaussian")
    cfg = TrainConfig(task="conjugate_gaussian", gamma=1.0, K=1, max_epochs=epochs, seed=0)
    net, report = train(cfg)
    print(f"trained {epochs} epochs, best epoch {report.best_epoch}, "
          f"best validation loss {report.best_val_loss:.4f}, -I0 {report.best_neg_mi0:.4f}")

    theta = np.linspace(-2, 2, 5)[:, None]
    x = np.full_like(theta, 1.0)
    print("theta  learned  analytic")
    for t, h, r in zip(theta[:, 0], net(theta, x), task.analytic_log_ratio(theta, x)):
        print(f"{t:5.1f}  {h:7.3f}  {r:8.3f}")

    rng = np.random.default_rng(1)
    surrogate = Surrogate.from_net(net, task)
    for x_o in (-1.0, 0.0, 2.0):
        z = estimate_partition(surrogate, [x_o], 100_000, rng)
        draws, rate = rejection_sample(surrogate, [x_o], 5000, rng)
        mean, var = task.posterior_moments(np.array([x_o]))
        print(f"x={x_o:+.1f}: Z_hat {z.z_hat:.3f} +- {z.stderr:.3f}; posterior mean "
              f"{draws.mean():.3f} (exact {float(np.ravel(mean)[0]):.3f}), var {draws.var():.3f} "
              f"(exact {float(np.ravel(var)[0]):.3f}), acceptance {rate:.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
