"""Robustness of saliency maps under an interpretation attack.

Reuses (or trains) standard and elastic-net-AT nets, runs an L2-bounded
attack on each test map, and compares the surviving top-40% intersection
between the two protocols.
"""

import os

from _lab import ELASTIC_AT, RUNS, STANDARD, ensure_dataset, mean_row, run

data = ensure_dataset(os.path.join(RUNS, "data"))
seeds = (0, 1, 2)
summary = {}

for name, preset in (("standard", STANDARD), ("elastic_at", ELASTIC_AT)):
    inters = []
    for seed in seeds:
        out = os.path.join(RUNS, "attack", f"{name}_seed{seed}")
        net = os.path.join(RUNS, "sparsity", f"{name}_seed{seed}", "net.sgnet")
        if not os.path.exists(net):
            run("train", data_dir=data, out_dir=os.path.dirname(net), seed=seed, **preset)
        run("attack", data_dir=data, out_dir=out, net_path=net,
            count=8, budget=2.0, attack_steps=60, k_fraction=0.4, seed=seed)
        header, mean = mean_row(os.path.join(out, "attack_report.csv"))
        inters.append(float(mean[header.index("topk_intersection")]))
    summary[name] = sum(inters) / len(inters)
    print(f"{name:<12} mean post-attack top-40% intersection: {summary[name]:.4f}")

print(f"gap (elastic - standard): {summary['elastic_at'] - summary['standard']:+.4f}")
