"""A miniature (gamma, K) sweep on two moons.

Run ``python demos/small_grid.py [out_dir]``.  Budgets and epochs are tiny so
the sweep finishes in a few minutes; C2ST values are correspondingly poor.
"""

import sys

from cnre.grid import GridSpec, run_grid


def main(out_dir: str = "runs/demo_grid") -> None:
    spec = GridSpec(
        tasks=["two_moons"],
        gammas=[0.1, 1.0, 10.0],
        Ks=[1, 5],
        budgets=[1000],
        seeds=[0],
        train={"max_epochs": 20},
        evaluation={"n_obs": 2, "n_samples": 1000, "partition_M": 10_000},
    )
    _, rows = run_grid(spec, out_dir=out_dir)
    print(f"{'gamma':>6} {'K':>3} {'c2st':>6} {'-I0':>8}")
    for row in rows:
        if row["task"] != "mean":
            print(f"{float(row['gamma']):>6g} {int(row['K']):>3d} {float(row['c2st_mean']):>6.3f} "
                  f"{float(row['neg_mi0_best']):>8.4f}")
    print(f"summary written to {out_dir}/grid_summary.csv")


if __name__ == "__main__":
    main(*sys.argv[1:2])
