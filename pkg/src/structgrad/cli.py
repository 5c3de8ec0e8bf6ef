"""Command-line entry point.

Every command reads a flat key=value config (plus --set overrides),
echoes the resolved config into its output directory, and writes CSV
reports, tensor artifacts, and PGM heatmaps there. Exit code 0 on
success; nonzero with a single-line error otherwise.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from structgrad import drivers, synth
from structgrad.config import echo_config, load_config
from structgrad.engine import load_network, save_network
from structgrad.saliency import feature_vis, simple_grad
from structgrad.tensorio import save_pgm, save_tensor, write_csv


def _load_data(cfg):
    train = synth.load_split(os.path.join(cfg["data_dir"], "train"))
    test_dir = os.path.join(cfg["data_dir"], "test")
    test = synth.load_split(test_dir) if os.path.isdir(test_dir) else []
    return train, test


def _out(cfg, name):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    return os.path.join(cfg["out_dir"], name)


def cmd_gen_data(cfg):
    scfg = synth.SynthConfig(
        class_count=cfg["classes"], train_count=cfg["train_count"],
        test_count=cfg["test_count"], image_size=cfg["image_size"],
        channels=cfg["channels"], background_kind=cfg["background"], seed=cfg["seed"],
    )
    samples = synth.gen_dataset(scfg)
    if cfg["with_attention"]:
        samples = synth.with_attention(samples, cfg["attention_focus"], cfg["attention_sigma"])
    frac = scfg.train_count / (scfg.train_count + scfg.test_count)
    synth.split_and_save(samples, frac, cfg["data_dir"],
                         config_echo=f"seed={cfg['seed']}\nclasses={cfg['classes']}")
    echo_config(cfg, cfg["data_dir"])


def cmd_train(cfg):
    train, test = _load_data(cfg)
    shape = train[0].image.shape
    classes = max(s.label for s in train) + 1
    rule = drivers.rule_from_config(cfg, shape)
    net = drivers.build_net_from(cfg, shape, classes)
    tc = drivers.train_config_from(cfg, rule)
    net, report = drivers.fit(cfg["protocol"], net, train, tc, test or None)
    echo_config(cfg, cfg["out_dir"])
    save_network(_out(cfg, cfg["net_path"]), net)
    rows = [[e, loss, acc] for e, (loss, acc) in
            enumerate(zip(report.epoch_losses, report.epoch_accuracies))]
    write_csv(_out(cfg, "train_report.csv"), ["epoch", "loss", "train_accuracy"], rows)
    final = report.final_test_accuracy if report.final_test_accuracy is not None else ""
    write_csv(_out(cfg, "train_summary.csv"),
              ["protocol", "rule", "seed", "final_test_accuracy"],
              [[cfg["protocol"], cfg["rule"], cfg["seed"], final]])
    with open(_out(cfg, "timing.log"), "w") as fh:
        fh.write(f"wall_clock_seconds={report.wall_clock}\n")


def cmd_saliency(cfg):
    _, test = _load_data(cfg)
    net = load_network(_out_path_for_net(cfg))
    echo_config(cfg, cfg["out_dir"])
    rows = []
    for i, s in enumerate(test[:cfg["count"]]):
        m = simple_grad(net, s.image, s.label, on_logits=cfg["on_logits"])
        save_tensor(_out(cfg, f"map_{i:04d}.ten"), m.values)
        save_pgm(_out(cfg, f"map_{i:04d}.pgm"), m.values)
        rows.append([i, s.label, float(np.abs(m.values).sum())])
    write_csv(_out(cfg, "saliency_report.csv"), ["index", "label", "mass"], rows)


def _out_path_for_net(cfg):
    path = cfg["net_path"]
    if not os.path.exists(path):
        path = os.path.join(cfg["out_dir"], cfg["net_path"])
    if not os.path.exists(path):
        raise FileNotFoundError(f"network file not found: {cfg['net_path']}")
    return path


def cmd_metrics(cfg):
    _, test = _load_data(cfg)
    net = load_network(_out_path_for_net(cfg))
    echo_config(cfg, cfg["out_dir"])
    rows = drivers.metric_rows(net, test[:cfg["count"]], cfg)
    write_csv(_out(cfg, "metrics_report.csv"),
              ["index", "gini", "five_acc", "five_recall", "five_precision", "five_fpr",
               "bin_acc", "bin_recall", "bin_precision", "bin_fpr"], rows)


def cmd_attack(cfg):
    _, test = _load_data(cfg)
    net = load_network(_out_path_for_net(cfg))
    echo_config(cfg, cfg["out_dir"])
    rows, _, _ = drivers.attack_rows(net, test[:cfg["count"]], cfg)
    write_csv(_out(cfg, "attack_report.csv"),
              ["index", "topk_intersection", "ssim", "rho_l2"], rows)


def cmd_diffroar(cfg):
    train, test = _load_data(cfg)
    net = load_network(_out_path_for_net(cfg))
    echo_config(cfg, cfg["out_dir"])
    rows = drivers.diffroar_rows(train[:cfg["train_count"]], test[:cfg["count"]], net, cfg,
                                 retrain_seeds=tuple(range(cfg["retrain_count"])))
    write_csv(_out(cfg, "diffroar_report.csv"), ["k_fraction", "diffroar_points"], rows)


def cmd_verify_duality(cfg):
    echo_config(cfg, cfg["out_dir"])
    rows = drivers.verify_duality_rows(cfg["seed"], cfg["grid_trials"], cfg["grid_steps"])
    write_csv(_out(cfg, "duality_report.csv"),
              ["rule", "trial", "closedForm", "bruteForce", "absGap", "tightResidual"], rows)
    worst = max(r[4] for r in rows)
    if worst > 1e-3:
        raise RuntimeError(f"duality certificate failed: worst grid gap {worst}")


def cmd_stability(cfg):
    train, test = _load_data(cfg)
    echo_config(cfg, cfg["out_dir"])
    shape = train[0].image.shape
    protocols = []
    for name in cfg["stability_protocols"].split(","):
        name = name.strip()
        rule = drivers.rule_from_config(cfg, shape) if name in ("fast", "iterative") else None
        protocols.append((name, rule))
    rows, _ = drivers.stability_rows(train, test, protocols, cfg, eval_count=cfg["count"])
    write_csv(_out(cfg, "stability_report.csv"),
              ["protocol", "index", "ssim", "topk_dice"], rows)


def cmd_sanity(cfg):
    train, test = _load_data(cfg)
    echo_config(cfg, cfg["out_dir"])
    if cfg["sanity_mode"] == "labels":
        rule = drivers.rule_from_config(cfg, train[0].image.shape)
        protocol = cfg["protocol"] if cfg["protocol"] != "standard" else "fast"
        if rule is None:
            from structgrad.rules import ElasticNet
            rule = ElasticNet(cfg["eps1"], cfg["eps2"])
        rep = drivers.label_randomization_report(train, test, cfg, protocol, rule)
        write_csv(_out(cfg, "sanity_labels_report.csv"),
                  list(rep.keys()), [[rep[k] for k in rep]])
    elif cfg["sanity_mode"] == "cascading":
        net = load_network(_out_path_for_net(cfg))
        rows = drivers.cascading_rows(net, test[:min(cfg["count"], 5)])
        write_csv(_out(cfg, "sanity_cascading_report.csv"),
                  ["layer_index", "mean_ssim"], rows)
    else:
        raise ValueError(f"unknown sanity mode {cfg['sanity_mode']!r}")


def cmd_harmonize_sweep(cfg):
    train, test = _load_data(cfg)
    if any(s.attention is None for s in train):
        raise ValueError("harmonize-sweep requires a dataset generated with attention maps")
    echo_config(cfg, cfg["out_dir"])
    rows, monotone = drivers.harmonize_sweep_rows(train, test, cfg["eps_list"], cfg,
                                                  eval_count=cfg["count"])
    write_csv(_out(cfg, "harmonize_report.csv"),
              ["eps", "top5_overlap", "top10_overlap", "test_accuracy"], rows)
    write_csv(_out(cfg, "harmonize_trend.csv"),
              ["monotone_pairs", "total_pairs"], [[monotone, len(cfg["eps_list"]) - 1]])


def cmd_featvis(cfg):
    train, _ = _load_data(cfg)
    net = load_network(_out_path_for_net(cfg))
    echo_config(cfg, cfg["out_dir"])
    classes = max(s.label for s in train) + 1
    shape = train[0].image.shape
    for c in range(classes):
        img = feature_vis(net, c, cfg["featvis_steps"], cfg["featvis_step_size"],
                          cfg["featvis_decay"], cfg["seed"], input_shape=shape)
        save_tensor(_out(cfg, f"featvis_class{c}.ten"), img)
        save_pgm(_out(cfg, f"featvis_class{c}.pgm"), img[0] if img.ndim == 3 else img)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "saliency": cmd_saliency,
    "metrics": cmd_metrics,
    "attack": cmd_attack,
    "diffroar": cmd_diffroar,
    "verify-duality": cmd_verify_duality,
    "stability": cmd_stability,
    "sanity": cmd_sanity,
    "harmonize-sweep": cmd_harmonize_sweep,
    "featvis": cmd_featvis,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="structgrad",
        description="Norm-regularized adversarial training lab for structured saliency maps",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        COMMANDS[args.command](cfg)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
