"""Diagnostics that need no reference posterior.

Run ``python demos/diagnostics_tour.py``.  Compares the exact conjugate ratio
with a version carrying an ``x``-dependent bias.
"""

import numpy as np

from cnre.diagnostics import importance_diagnostic, mi_bounds
from cnre.posterior import Surrogate, estimate_partition
from cnre.tasks import get_task


def main() -> None:
    task = get_task("conjugate_gaussian")
    rng = np.random.default_rng(0)
    exact = task.analytic_log_ratio
    biased = lambda t, x: exact(t, x) + x[:, 0]  # noqa: E731

    for label, fn in (("exact", exact), ("biased", biased)):
        s = Surrogate(fn, task)
        z = [estimate_partition(s, [x], 50_000, rng).z_hat for x in (-2.0, 0.0, 2.0)]
        roc = importance_diagnostic(fn, 0.5, task, 2000, rng)
        mi = mi_bounds(fn, task, 5000, 500, rng)
        print(f"{label:>6}: Z_hat at x=-2,0,2 {np.round(z, 3)}; importance AUC {roc.auc:.3f}; "
              f"I0 {mi.i0_hat:.4f}, I1 {mi.i1_hat:.4f} (true {0.5 * np.log(2):.4f})")

    power = importance_diagnostic(exact, 0.5, task, 2000, rng, weighted=False)
    print(f"without weights the classes differ, AUC {power.auc:.3f}: the classifier has power")


if __name__ == "__main__":
    main()
