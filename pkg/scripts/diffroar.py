"""DiffROAR: does the saliency ordering carry predictive signal?

For each removal fraction k, masks the top-k and bottom-k attributed
pixels of every image, retrains a fresh net on each masked dataset, and
reports the test-accuracy difference (bottom-masked minus top-masked, in
points). Positive values mean the map ranks predictive pixels first.
Also runs the control: maps from an untrained net should give |DiffROAR|
near zero.
"""

import os

from _lab import L1_AT, RUNS, ensure_dataset, read_csv, run

data = ensure_dataset(os.path.join(RUNS, "data"))
net_dir = os.path.join(RUNS, "sparsity", "l1_at_seed0")
net = os.path.join(net_dir, "net.sgnet")
if not os.path.exists(net):
    run("train", data_dir=data, out_dir=net_dir, seed=0, **L1_AT)

out = os.path.join(RUNS, "diffroar")
run("diffroar", data_dir=data, out_dir=out, net_path=net,
    train_count=1000, count=300, ks=(0.2, 0.5, 0.8),
    lr=0.2, epochs=8, batch_size=32, seed=0, retrain_count=3, map_sigma=1.0)

header, rows = read_csv(os.path.join(out, "diffroar_report.csv"))
for k, points in rows:
    print(f"k={float(k):.0%}: DiffROAR = {float(points):+.2f} points")
