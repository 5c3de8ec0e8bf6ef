"""Flat key=value run configuration with CLI overrides.

One key per line, "#" starts a comment. Unknown keys are rejected.
Every run writes a resolved-config echo so it can be replayed exactly.
"""

from __future__ import annotations

import os


class ConfigError(ValueError):
    pass


def _bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes"):
        return True
    if raw.lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _float_list(raw: str):
    return tuple(float(v) for v in raw.split(",") if v != "")


def _int_list(raw: str):
    return tuple(int(v) for v in raw.split(",") if v != "")


# key -> (parser, default)
SCHEMA = {
    # dataset
    "data_dir": (str, "data"),
    "classes": (int, 4),
    "train_count": (int, 2000),
    "test_count": (int, 500),
    "image_size": (int, 32),
    "channels": (int, 1),
    "background": (str, "mixed"),
    "attention_focus": (str, "distinguishing"),
    "attention_sigma": (float, 2.0),
    "with_attention": (_bool, False),
    # network / training
    "arch": (str, "conv"),  # conv | mlp
    "hidden": (_int_list, (48,)),
    "activation": (str, "relu"),
    "protocol": (str, "standard"),
    "rule": (str, "none"),  # none | linf | group | elastic | weighted
    "eps": (float, 0.03),
    "eps1": (float, 0.01),
    "eps2": (float, 0.05),
    "patch_size": (int, 4),
    "epochs": (int, 10),
    "batch_size": (int, 32),
    "lr": (float, 0.5),
    "optimizer": (str, "sgd"),  # sgd | adam
    "seed": (int, 0),
    "iter_steps": (int, 7),
    "iter_step_size": (float, 0.3),
    "noise_sigma": (float, 0.1),
    "harmonize_eps": (float, 0.5),
    "net_path": (str, "net.sgnet"),
    # saliency / metrics
    "count": (int, 50),
    "on_logits": (_bool, False),
    "smooth_n": (int, 16),
    "smooth_sigma": (float, 0.1),
    "keep_fraction": (float, 0.05),
    "q2": (float, -1.0),  # negative: use per-sample true area fractions
    "q1": (float, -1.0),
    "q": (float, -1.0),
    "k_fraction": (float, 0.4),
    "aopc_steps": (int, 50),
    # attack / diffroar / drivers
    "budget": (float, 0.5),
    "attack_steps": (int, 60),
    "ks": (_float_list, (0.2, 0.5, 0.8)),
    "map_sigma": (float, 1.0),  # Gaussian blur of |map| for pixel-removal ordering
    "retrain_count": (int, 1),  # retrain seeds per masked dataset
    "eps_list": (_float_list, (0.0, 0.1, 0.3, 0.6)),
    "swap_fraction": (float, 0.1),
    "stability_protocols": (str, "standard,fast"),
    "sanity_mode": (str, "labels"),  # labels | cascading
    "featvis_steps": (int, 200),
    "featvis_step_size": (float, 0.5),
    "featvis_decay": (float, 0.05),
    "grid_steps": (int, 401),
    "grid_trials": (int, 50),
    "out_dir": (str, "out"),
}


def default_config() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def _set(cfg: dict, key: str, raw: str, origin: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r} ({origin})")
    parser = SCHEMA[key][0]
    try:
        cfg[key] = parser(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({origin}): {exc}") from exc


def load_config(path: str | None = None, overrides=()) -> dict:
    """Resolved config: defaults, then the file, then key=value overrides."""
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, raw = line.split("=", 1)
                _set(cfg, key.strip(), raw.strip(), f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set(cfg, key.strip(), raw.strip(), "override")
    return cfg


def echo_config(cfg: dict, out_dir: str, name: str = "resolved_config.txt") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key}={val}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
