"""Stability of saliency maps across stochastic retraining.

Trains each protocol twice with different data orderings and a swapped
subset of training samples, then compares the two runs' maps on shared
test images via SSIM and top-k Dice.
"""

import csv
import os

from _lab import RUNS, ensure_dataset, run

data = ensure_dataset(os.path.join(RUNS, "data"))
out = os.path.join(RUNS, "stability")

run("stability", data_dir=data, out_dir=out,
    stability_protocols="standard,fast", rule="elastic", eps1=0.01, eps2=0.05,
    lr=0.2, epochs=15, batch_size=32, count=40,
    swap_fraction=0.1, k_fraction=0.4, seed=0)

with open(os.path.join(out, "stability_report.csv"), newline="") as fh:
    rows = list(csv.reader(fh))[1:]
for proto in ("standard", "fast"):
    mean = next(r for r in rows if r[0] == proto and r[1] == "mean")
    print(f"{proto:<10} mean SSIM {float(mean[2]):.4f}  mean top-k Dice {float(mean[3]):.4f}")
