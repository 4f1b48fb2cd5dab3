"""How the contrastive losses relate to each other.

Run ``python demos/loss_family.py``.  Uses the analytic conjugate ratio and
the constant zero classifier, so no training is involved.
"""

import numpy as np

from cnre.diagnostics import nreb_illposedness_demo
from cnre.losses import LossConfig, assemble_contrastive_batch, loss_nrea, loss_nreb, loss_nrec, zero_logit_loss
from cnre.tasks import get_task, sample_joint


def main() -> None:
    task = get_task("conjugate_gaussian")
    rng = np.random.default_rng(0)
    ratio = task.analytic_log_ratio
    zero = lambda t, x: np.zeros(t.shape[0])  # noqa: E731

    print("zero classifier: loss equals its closed form for every (gamma, K)")
    for gamma, K in ((1.0, 1), (1.0, 2), (4.0, 5), (100.0, 10)):
        ind, dep = assemble_contrastive_batch(task, "fresh_joint", 256, K, rng)
        print(f"  gamma={gamma:<6g} K={K:<3d} loss {loss_nrec(zero, ind, dep, LossConfig('C', gamma, K)):.6f}"
              f"  closed form {zero_logit_loss(gamma, K):.6f}")

    ind, dep = assemble_contrastive_batch(task, "fresh_joint", 2048, 1, rng)
    print(f"\ngamma=1, K=1 reproduces the binary loss: "
          f"{loss_nrec(ratio, ind, dep, LossConfig('C', 1.0, 1)):.12f} vs {loss_nrea(ratio, ind, dep):.12f}")

    ind, dep = assemble_contrastive_batch(task, "fresh_joint", 2048, 10, rng)
    print("large gamma approaches the multiclass loss (K=10):")
    for gamma in (1e1, 1e3, 1e6):
        gap = loss_nrec(ratio, ind, dep, LossConfig("C", gamma, 10)) - loss_nreb(ratio, dep)
        print(f"  gamma={gamma:g}: difference {gap:.2e}")

    shifted = lambda t, x: ratio(t, x) + x[:, 0]  # noqa: E731
    print(f"\nadding an x-only bias c(x)=x leaves the multiclass loss unchanged: "
          f"{loss_nreb(ratio, dep):.6f} vs {loss_nreb(shifted, dep):.6f}")
    print(f"but changes the NRE-C loss: {loss_nrec(ratio, ind, dep, LossConfig('C', 1.0, 10)):.6f} vs "
          f"{loss_nrec(shifted, ind, dep, LossConfig('C', 1.0, 10)):.6f}")

    _, _, diff = nreb_illposedness_demo(ratio, lambda x: np.exp(x[:, 0]), 0.5, task, 1000, rng)
    print(f"self-normalized weights over x shift by up to {diff:.3f} under a multiplicative bias exp(x)")

    joint = sample_joint(task, 5, rng)
    print("\nanalytic log ratio on five joint draws:", np.round(ratio(joint.theta, joint.x), 3))


if __name__ == "__main__":
    main()
