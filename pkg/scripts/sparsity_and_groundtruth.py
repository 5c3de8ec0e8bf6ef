"""Saliency sparsity and ground-truth accuracy across training protocols.

Trains standard, fast L-inf AT, and fast elastic-net AT nets over three
seeds on the shared synthetic dataset, then scores simple-gradient maps:
mean Gini sparsity and binary pixel accuracy against the ground-truth
object masks.
"""

import os

from _lab import ELASTIC_AT, L1_AT, RUNS, STANDARD, ensure_dataset, mean_row, run

data = ensure_dataset(os.path.join(RUNS, "data"))
seeds = (0, 1, 2)
presets = {"standard": STANDARD, "l1_at": L1_AT, "elastic_at": ELASTIC_AT}
summary = {}

for name, preset in presets.items():
    ginis, bin_accs = [], []
    for seed in seeds:
        out = os.path.join(RUNS, "sparsity", f"{name}_seed{seed}")
        run("train", data_dir=data, out_dir=out, seed=seed, **preset)
        run("metrics", data_dir=data, out_dir=out,
            net_path=os.path.join(out, "net.sgnet"), count=100)
        header, mean = mean_row(os.path.join(out, "metrics_report.csv"))
        ginis.append(float(mean[header.index("gini")]))
        bin_accs.append(float(mean[header.index("bin_acc")]))
    summary[name] = (sum(ginis) / len(ginis), sum(bin_accs) / len(bin_accs))

print(f"{'protocol':<12} {'gini':>8} {'bin_acc':>8}   (3-seed means)")
for name, (g, b) in summary.items():
    print(f"{name:<12} {g:8.4f} {b:8.4f}")
print(f"gini gap (l1 - standard):      {summary['l1_at'][0] - summary['standard'][0]:+.4f}")
print(f"bin_acc gap (elastic - std):   {summary['elastic_at'][1] - summary['standard'][1]:+.4f}")
