"""Harmonization sweep: align saliency maps with synthetic attention maps.

Generates a dataset carrying per-sample attention maps, trains the
weighted-perturbation protocol over a grid of strengths eps, and reports
the top-5% map/attention overlap and test accuracy per eps.
"""

import os

from _lab import RUNS, ensure_dataset, read_csv, run

data = ensure_dataset(os.path.join(RUNS, "data_attention"),
                      train_count=600, test_count=200, seed=11,
                      with_attention=True, attention_focus="distinguishing",
                      attention_sigma=2.0)
out = os.path.join(RUNS, "harmonize")

run("harmonize-sweep", data_dir=data, out_dir=out,
    eps_list=(0.0, 0.05, 0.1, 0.15, 0.2), lr=0.2, epochs=15, batch_size=32,
    count=60, seed=0)

header, rows = read_csv(os.path.join(out, "harmonize_report.csv"))
print(f"{'eps':>6} {'top5_overlap':>13} {'accuracy':>9}")
for eps, o5, _, acc in rows:
    print(f"{float(eps):6.2f} {float(o5):13.4f} {float(acc):9.4f}")
_, trend = read_csv(os.path.join(out, "harmonize_trend.csv"))
print(f"non-decreasing consecutive pairs: {trend[0][0]}/{trend[0][1]}")
