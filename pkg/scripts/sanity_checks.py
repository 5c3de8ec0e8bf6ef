"""Saliency sanity checks: cascading randomization and label randomization.

Cascading: progressively re-initialize layers of a trained net from the
output side and track SSIM between the original and randomized maps — it
should fall as more layers are randomized. Labels: training on shuffled
labels should give chance-level accuracy and flagged degenerate maps.
"""

import os

from _lab import ELASTIC_AT, RUNS, ensure_dataset, read_csv, run

data = ensure_dataset(os.path.join(RUNS, "data"))
net_dir = os.path.join(RUNS, "sparsity", "elastic_at_seed0")
net = os.path.join(net_dir, "net.sgnet")
if not os.path.exists(net):
    run("train", data_dir=data, out_dir=net_dir, seed=0, **ELASTIC_AT)

casc = os.path.join(RUNS, "sanity_cascading")
run("sanity", sanity_mode="cascading", data_dir=data, out_dir=casc,
    net_path=net, count=5, seed=0)
header, rows = read_csv(os.path.join(casc, "sanity_cascading_report.csv"))
print("cascading randomization (layer -1 = untouched control):")
for layer, ssim in rows:
    print(f"  layers randomized through index {layer}: mean SSIM {float(ssim):.4f}")

labels = os.path.join(RUNS, "sanity_labels")
run("sanity", sanity_mode="labels", data_dir=data, out_dir=labels,
    protocol="fast", rule="elastic", eps1=0.01, eps2=0.05,
    lr=0.2, epochs=10, batch_size=32, seed=0)
header, rows = read_csv(os.path.join(labels, "sanity_labels_report.csv"))
rep = dict(zip(header, rows[0]))
print("label randomization:")
for key in header:
    print(f"  {key} = {rep[key]}")
