"""Numerically certify the closed-form conjugate values against brute force.

For each perturbation rule, compares the closed-form regularizer value
h*(g) with a grid search over the feasible set, and checks that the
analytic one-step maximizer attains the closed-form value (tightness).
"""

from _lab import RUNS, read_csv, run
import os

out = os.path.join(RUNS, "duality")
run("verify-duality", out_dir=out, seed=0, grid_trials=50, grid_steps=401)

header, rows = read_csv(os.path.join(out, "duality_report.csv"))
worst_gap = max(float(r[4]) for r in rows)
worst_tight = max(float(r[5]) for r in rows)
print(f"{len(rows)} certificates, worst grid gap {worst_gap:.3e}, "
      f"worst tightness residual {worst_tight:.3e}")
