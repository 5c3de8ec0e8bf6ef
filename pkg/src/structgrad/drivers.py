"""Composite experiment drivers shared by the CLI and the acceptance suite.

Each driver is a pure-ish function from config values and in-memory
datasets to report rows; the CLI layer handles file I/O around them.
"""

from __future__ import annotations

import numpy as np

from structgrad import metrics as M
from structgrad.engine import Network, make_convnet, make_mlp
from structgrad.rng import make_rng
from structgrad.rules import (
    ElasticNet,
    GroupBall,
    LinfBall,
    WeightedL2,
    argmax_perturb,
    brute_force_conj,
    conj_value,
    make_patch_groups,
    penalty_value,
)
from structgrad.saliency import simple_grad
from structgrad.training import (
    TRAINERS,
    TrainConfig,
    evaluate,
    train_harmonize,
    train_standard,
)


def build_net(input_shape, class_count: int, seed: int, hidden=(48,),
              activation: str = "relu", arch: str = "conv") -> Network:
    rng = make_rng(seed, 20)
    if arch == "conv":
        return make_convnet(rng, input_shape, class_count, activation)
    if arch == "mlp":
        size = int(np.prod(input_shape))
        return make_mlp(rng, size, list(hidden), class_count, activation)
    raise ValueError(f"unknown arch {arch!r} (choose mlp|conv)")


def build_net_from(cfg: dict, input_shape, class_count: int, seed=None) -> Network:
    return build_net(input_shape, class_count,
                     cfg["seed"] if seed is None else seed,
                     cfg["hidden"], cfg["activation"], cfg["arch"])


def rule_from_config(cfg: dict, input_shape):
    name = cfg["rule"]
    if name == "none":
        return None
    # vanishing coefficients degenerate to no perturbation at all, which the
    # training layer realizes as the standard protocol
    if name == "linf":
        return LinfBall(cfg["eps"]) if cfg["eps"] > 0 else None
    if name == "group":
        if cfg["eps"] == 0:
            return None
        if len(input_shape) != 3:
            raise ValueError("group rule needs (C, H, W) inputs")
        c, h, w = input_shape
        return GroupBall(cfg["eps"], make_patch_groups(h, w, c, cfg["patch_size"]))
    if name == "elastic":
        if cfg["eps1"] == 0 and cfg["eps2"] == 0:
            return None
        return ElasticNet(cfg["eps1"], cfg["eps2"])
    raise ValueError(f"unknown rule {name!r} (choose none|linf|group|elastic)")


def train_config_from(cfg: dict, rule=None) -> TrainConfig:
    protocol = cfg["protocol"] if cfg["protocol"] != "harmonize" else "standard"
    if protocol in ("fast", "iterative") and rule is None:
        protocol = "standard"  # vanishing-coefficient degenerate case
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["lr"],
        seed=cfg["seed"], rule=rule,
        protocol=protocol,
        iter_steps=cfg["iter_steps"], iter_step_size=cfg["iter_step_size"],
        noise_sigma=cfg["noise_sigma"], harmonize_eps=cfg["harmonize_eps"],
        optimizer=cfg["optimizer"],
    )


def fit(protocol: str, net, train_set, tc: TrainConfig, test_set=None):
    if protocol == "harmonize":
        return train_harmonize(net, train_set, tc, test_set)
    if protocol not in TRAINERS:
        raise ValueError(f"unknown protocol {protocol!r}")
    # tc.protocol already resolves degenerate fast/iterative-without-rule runs
    return TRAINERS[tc.protocol](net, train_set, tc, test_set)


def maps_for(net, samples, on_logits=False):
    return [simple_grad(net, s.image, s.label, on_logits=on_logits).values for s in samples]


# --- duality certificates ----------------------------------------------------

def _duality_cases(seed: int, trials: int):
    rng = make_rng(seed, 30)
    for t in range(trials):
        g = rng.uniform(-1.0, 1.0, size=3)
        yield "linf", LinfBall(0.1), g, 0.2
        g4 = rng.standard_normal(4)
        for block in (slice(0, 2), slice(2, 4)):
            norm = np.linalg.norm(g4[block])
            if norm > 0:
                g4[block] *= 0.5 / norm
        yield "group", GroupBall(0.1, ((0, 1), (2, 3))), g4, 0.1
        yield "elastic", ElasticNet(0.1, 0.05), rng.uniform(-1.0, 1.0, size=3), 0.3
        w = rng.uniform(0.5, 1.5, size=3)
        yield "weighted", WeightedL2(0.2, w), rng.uniform(-0.5, 0.5, size=3), 0.5


def verify_duality_rows(seed: int = 0, trials: int = 50, grid_steps: int = 401):
    """Per rule and random gradient: closed-form conjugate vs. grid oracle,
    and the tightness residual of the analytic maximizer."""
    rows = []
    for trial, (name, rule, g, bound) in enumerate(_duality_cases(seed, trials)):
        closed = conj_value(rule, g)
        brute = brute_force_conj(rule, g, bound, grid_steps)
        delta = argmax_perturb(rule, g)
        tight = float(delta @ g) - penalty_value(rule, delta) - closed
        rows.append([name, trial // 4, closed, brute, abs(closed - brute), abs(tight)])
    return rows


# --- stability ---------------------------------------------------------------

def _swap_train(train_set, test_set, swap_fraction: float, seed: int):
    k = int(np.rint(swap_fraction * len(train_set)))
    if k > len(test_set):
        raise ValueError("dataset too small for the requested swap")
    rng = make_rng(seed, 31)
    drop = rng.choice(len(train_set), size=k, replace=False)
    take = rng.choice(len(test_set), size=k, replace=False)
    out = list(train_set)
    for slot, src in zip(drop, take):
        out[slot] = test_set[src]
    return out, set(take.tolist())


def stability_rows(train_set, test_set, protocols, cfg, eval_count=50):
    """Train two stochastic runs (seeds s and s+1, 10%-swapped data) per
    protocol; report per-image SSIM and top-k Dice of their maps over a
    shared evaluation set."""
    rows = []
    summaries = {}
    for proto_name, rule in protocols:
        nets = []
        used = set()
        for run in (0, 1):
            seed = cfg["seed"] + run
            swapped, taken = _swap_train(train_set, test_set, cfg["swap_fraction"], seed)
            used |= taken
            tc = train_config_from({**cfg, "seed": seed, "protocol": proto_name}, rule)
            net = build_net_from(cfg, train_set[0].image.shape, _class_count(train_set), seed)
            net, _ = fit(proto_name, net, swapped, tc)
            nets.append(net)
        shared = [i for i in range(len(test_set)) if i not in used][:eval_count]
        ssims, dices = [], []
        for i in shared:
            s = test_set[i]
            a = simple_grad(nets[0], s.image, s.label).values
            b = simple_grad(nets[1], s.image, s.label).values
            sim = M.ssim(a, b)
            dice = M.topk_dice(a, b, cfg["k_fraction"]) if a.any() and b.any() else 0.0
            ssims.append(sim)
            dices.append(dice)
            rows.append([proto_name, i, sim, dice])
        mean_ssim, mean_dice = float(np.mean(ssims)), float(np.mean(dices))
        rows.append([proto_name, "mean", mean_ssim, mean_dice])
        summaries[proto_name] = (mean_ssim, mean_dice)
    return rows, summaries


def _class_count(samples):
    return int(max(s.label for s in samples)) + 1


# --- harmonization sweep -----------------------------------------------------

def harmonize_sweep_rows(train_set, test_set, eps_list, cfg, eval_count=100):
    """Train with attention harmonization at each eps; report top-5% / 10%
    Dice overlap between simple-grad maps and attention maps plus accuracy."""
    rows = []
    for eps in eps_list:
        tc = train_config_from({**cfg, "harmonize_eps": eps})
        net = build_net_from(cfg, train_set[0].image.shape, _class_count(train_set))
        net, report = fit("harmonize", net, train_set, tc, test_set)
        o5, o10 = [], []
        for s in test_set[:eval_count]:
            m = simple_grad(net, s.image, s.label).values
            if not m.any():
                o5.append(0.0)
                o10.append(0.0)
                continue
            o5.append(M.topk_dice(m, s.attention, 0.05))
            o10.append(M.topk_dice(m, s.attention, 0.10))
        rows.append([eps, float(np.mean(o5)), float(np.mean(o10)),
                     report.final_test_accuracy])
    overlaps = [r[1] for r in rows]
    pairs = list(zip(overlaps, overlaps[1:]))
    monotone_pairs = sum(1 for a, b in pairs if b >= a - 1e-12)
    return rows, monotone_pairs


# --- sanity checks -----------------------------------------------------------

def label_randomization_report(train_set, test_set, cfg, protocol="fast", rule=None,
                               eval_count=50):
    """Train on permuted labels; report accuracy and a degenerate-saliency flag.

    Saliency is flagged degenerate when the mean per-map attribution mass
    collapses well below the untrained network's level, or maps are
    exactly zero.
    """
    rng = make_rng(cfg["seed"], 32)
    labels = rng.permutation([s.label for s in train_set])

    class _Relabeled:
        def __init__(self, s, label):
            self.image = s.image
            self.label = int(label)
            self.attention = getattr(s, "attention", None)

    shuffled = [_Relabeled(s, l) for s, l in zip(train_set, labels)]
    net0 = build_net_from(cfg, train_set[0].image.shape, _class_count(train_set))
    init_mass = float(np.mean([simple_grad(net0, s.image, s.label).values.sum()
                               for s in test_set[:eval_count]]))
    tc = train_config_from({**cfg, "protocol": protocol}, rule)
    net, _ = fit(protocol, net0, shuffled, tc)
    _, acc = evaluate(net, test_set)
    mass = float(np.mean([simple_grad(net, s.image, s.label).values.sum()
                          for s in test_set[:eval_count]]))
    chance = 1.0 / _class_count(train_set)
    degenerate = mass < 0.5 * init_mass or mass == 0.0
    return {
        "test_accuracy": acc,
        "chance_level": chance,
        "chance_level_accuracy": abs(acc - chance) <= 0.10,
        "mean_saliency_mass": mass,
        "init_saliency_mass": init_mass,
        "degenerate_saliency": bool(degenerate),
    }


def cascading_rows(net, samples, seeds=(0, 1, 2, 3, 4)):
    """Mean SSIM after each cascading layer randomization, seed-averaged."""
    per_seed = []
    for seed in seeds:
        sims = None
        for s in samples:
            res = M.cascading_randomization(net, s.image, s.label, seed=seed)
            vals = [v for _, v in res]
            sims = vals if sims is None else [a + b for a, b in zip(sims, vals)]
        per_seed.append([v / len(samples) for v in sims])
    layer_ids = [i for i, _ in M.cascading_randomization(net, samples[0].image,
                                                         samples[0].label, seed=0)]
    mean = np.mean(per_seed, axis=0)
    return [[layer_ids[j], float(mean[j])] for j in range(len(layer_ids))]


# --- dataset-level metrics ---------------------------------------------------

def metric_rows(net, samples, cfg):
    """Per-sample Gini + ground-truth scores, with a trailing mean row."""
    rows = []
    ginis, bins, fives = [], [], []
    for i, s in enumerate(samples):
        m = simple_grad(net, s.image, s.label).values
        if not m.any():
            continue
        n = m.size
        q2 = cfg["q2"] if cfg["q2"] >= 0 else float(np.sum(s.mask == 2) / n)
        q1 = cfg["q1"] if cfg["q1"] >= 0 else float(np.sum(s.mask == 1) / n)
        q = cfg["q"] if cfg["q"] >= 0 else q2
        g = M.gini(m)
        five = M.five_band_scores(m, s.mask, q2, q1)
        binary = M.binary_scores(m, s.mask, q)
        ginis.append(g)
        fives.append(five)
        bins.append(binary)
        rows.append([i, g, *five, *binary])
    rows.append(["mean", float(np.mean(ginis)),
                 *[float(v) for v in np.mean(fives, axis=0)],
                 *[float(v) for v in np.mean(bins, axis=0)]])
    return rows


def attack_rows(net, samples, cfg):
    rows = []
    inters, sims = [], []
    for i, s in enumerate(samples):
        res = M.interp_attack(net, s.image, cfg["budget"], cfg["attack_steps"],
                              cfg["seed"] + i, cfg["k_fraction"])
        inters.append(res.topk_intersection)
        sims.append(res.ssim)
        rows.append([i, res.topk_intersection, res.ssim,
                     float(np.linalg.norm(res.rho.reshape(-1)))])
    rows.append(["mean", float(np.mean(inters)), float(np.mean(sims)), ""])
    return rows, float(np.mean(inters)), float(np.mean(sims))


def _removal_order_maps(net, samples, sigma):
    """Importance maps for pixel-removal experiments: channel-summed |simple
    grad|, Gaussian-blurred by ``sigma``.

    Raw ReLU gradient maps are edge maps: the flat interior of a salient
    region gets near-zero gradient and lands in the *bottom* of the pixel
    ordering, so bottom-k removal would delete the region itself. Blurring
    spreads the edge response over the region before ranking; sigma=0 keeps
    the raw maps.
    """
    from scipy.ndimage import gaussian_filter

    out = []
    for m in maps_for(net, samples):
        m = np.abs(m)
        m = m.sum(axis=0) if m.ndim == 3 else m
        out.append(gaussian_filter(m, sigma) if sigma > 0 else m)
    return out


def diffroar_rows(train_set, test_set, net, cfg, retrain_seeds=(0,)):
    sigma = cfg["map_sigma"]
    train_maps = _removal_order_maps(net, train_set, sigma)
    test_maps = _removal_order_maps(net, test_set, sigma)

    def make_net(seed):
        return build_net_from(cfg, train_set[0].image.shape,
                              _class_count(train_set), seed + 100)

    def retrain(fresh, dataset, seed):
        tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                         learning_rate=cfg["lr"], seed=seed,
                         optimizer=cfg["optimizer"])
        return train_standard(fresh, dataset, tc)

    scores = M.diffroar(train_set, test_set, train_maps, test_maps,
                        cfg["ks"], make_net, retrain, seeds=retrain_seeds)
    return [[k, scores[k]] for k in cfg["ks"]]
