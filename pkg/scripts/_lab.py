"""Shared plumbing for the experiment scripts.

Each script drives the ``structgrad`` CLI with explicit settings so a run
can be reproduced by pasting the echoed commands. Results land under
``runs/<experiment>/``.
"""

import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from structgrad.cli import main as cli_main  # noqa: E402

RUNS = os.path.join(os.path.dirname(__file__), "..", "runs")

# One shared synthetic dataset for all comparison experiments.
DATA_SETS = dict(classes=4, train_count=2000, test_count=500, image_size=32, seed=7)

# Training presets (learning rates tuned per protocol; see configs echoed
# into each run directory).
STANDARD = dict(protocol="standard", rule="none", lr=0.2, epochs=15, batch_size=32)
L1_AT = dict(protocol="fast", rule="linf", eps=0.03, lr=0.05, epochs=15, batch_size=32)
ELASTIC_AT = dict(protocol="fast", rule="elastic", eps1=0.01, eps2=0.05, lr=0.2,
                  epochs=15, batch_size=32)


def run(command, **settings):
    argv = [command]
    for key, val in settings.items():
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        argv += ["--set", f"{key}={val}"]
    print("$ structgrad " + " ".join(argv), flush=True)
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)


def ensure_dataset(data_dir, **over):
    if not os.path.isdir(os.path.join(data_dir, "train")):
        sets = dict(DATA_SETS)
        sets.update(over)
        run("gen-data", data_dir=data_dir, **sets)
    return data_dir


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def mean_row(path, label="mean"):
    header, rows = read_csv(path)
    for row in rows:
        if row[0] == label:
            return header, row
    raise KeyError(f"no {label!r} row in {path}")
