"""How shared games contaminate a randomised experiment.

Simulates one Case I experiment, shows how few controls stay clean, and
compares the naive difference in means with the per-level estimators.

    python3 demos/01_contamination.py
"""

import numpy as np

from spillover import case_config, run_all_estimators, simulate_experiment, true_tau

ds = simulate_experiment(case_config("I", n_players=1000, seed=1))

print("[1] Who ends up where")
for label, count in ds.group_sizes().items():
    print(f"    {label.value:<4} {count:5d}  ({count / ds.n:.1%})")
print("    Most controls share at least one game with a treated player.")

print("\n[2] Exposure counts among treated players")
levels, counts = np.unique(np.minimum(ds.m[ds.z == 1], 10), return_counts=True)
for level, c in zip(levels, counts):
    print(f"    m={level:<3}{'+' if level == 10 else ' '} {'#' * (c // 5)} {c}")

print("\n[3] Estimates against the truth 0.75 sqrt(m)")
est = run_all_estimators(ds, truncate_at=10)
print(f"    {'m':>3} {'truth':>7} " + " ".join(f"{k:>15}" for k in est))
for m in range(1, 10):
    cells = " ".join(f"{'-' if e.estimate(m) is None else f'{e.estimate(m):.3f}':>15}" for e in est.values())
    print(f"    {m:>3} {true_tau(m):7.3f} {cells}")

truth = float(np.mean(true_tau(ds.m[ds.z == 1])))
print(f"\n[4] Overall effect on the treated: truth {truth:.3f}")
for kind, e in est.items():
    print(f"    {kind:<15} {e.overall:.3f}")
print("    The naive contrast is pulled toward zero because its controls are also treated.")
