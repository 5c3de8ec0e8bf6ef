"""Quantitative evaluation of saliency maps: sparsity, similarity,
fidelity, ground-truth accuracy, retraining-based interpretability,
attack robustness, and sanity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from structgrad.engine import (
    Network,
    forward,
    parameterized_layer_indices,
    reinit_layer,
)
from structgrad.rng import make_rng
from structgrad.saliency import simple_grad


def gini(values: np.ndarray) -> float:
    """Hurley-Rickard sparsity index in [0, 1 - 1/d]; 0 for uniform maps."""
    c = np.sort(np.abs(np.asarray(values, dtype=np.float64).reshape(-1)))
    total = c.sum()
    if total == 0:
        raise ValueError("Gini index undefined for an all-zero map")
    d = c.size
    k = np.arange(1, d + 1)
    return float(1.0 - 2.0 * np.sum((c / total) * ((d - k + 0.5) / d)))


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi > lo:
        return (a - lo) / (hi - lo)
    return np.zeros_like(a)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(map_a: np.ndarray, map_b: np.ndarray) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) on
    min-max-normalized maps; images smaller than the window fall back to
    one full-image window."""
    a = np.asarray(map_a, dtype=np.float64)
    b = np.asarray(map_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = _minmax(a)
    b = _minmax(b)
    c1, c2 = 0.01**2, 0.03**2
    if a.ndim != 2 or min(a.shape) < 11:
        mu_a, mu_b = a.mean(), b.mean()
        va, vb = a.var(), b.var()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        return float(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                     / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    win = _gaussian_window()
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    va = convolve2d(a * a, win, mode="valid") - mu_a**2
    vb = convolve2d(b * b, win, mode="valid") - mu_b**2
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
    return float(smap.mean())


def _topk_mask(values: np.ndarray, k_fraction: float) -> np.ndarray:
    """Indices of the ceil(k * m) largest-|.| entries among the m nonzero
    entries; ties broken toward the lowest flat index."""
    flat = np.abs(np.asarray(values, dtype=np.float64).reshape(-1))
    nonzero = np.flatnonzero(flat)
    if nonzero.size == 0:
        raise ValueError("map has no nonzero attributions")
    k = int(math.ceil(k_fraction * nonzero.size))
    order = nonzero[np.argsort(-flat[nonzero], kind="stable")]
    return set(order[:k].tolist())


def topk_intersection(map_a, map_b, k_fraction: float) -> float:
    """|topk(A) & topk(B)| / |topk(A)| over nonzero-attribution pixels."""
    if not 0 < k_fraction <= 1:
        raise ValueError("k_fraction must be in (0, 1]")
    ta = _topk_mask(map_a, k_fraction)
    tb = _topk_mask(map_b, k_fraction)
    return len(ta & tb) / len(ta)


def topk_dice(map_a, map_b, k_fraction: float) -> float:
    """Dice score 2|A&B|/(|A|+|B|) of the same top-k masks."""
    if not 0 < k_fraction <= 1:
        raise ValueError("k_fraction must be in (0, 1]")
    ta = _topk_mask(map_a, k_fraction)
    tb = _topk_mask(map_b, k_fraction)
    return 2.0 * len(ta & tb) / (len(ta) + len(tb))


def _spatial_order(values: np.ndarray, most_relevant_first=True) -> np.ndarray:
    flat = np.abs(np.asarray(values, dtype=np.float64).reshape(-1))
    key = -flat if most_relevant_first else flat
    return np.argsort(key, kind="stable")


def aopc(net: Network, x: np.ndarray, values: np.ndarray, y: int, steps: int,
         baseline_value, on_logits: bool = False, most_relevant_first: bool = True) -> float:
    """Area over the perturbation curve: delete one spatial pixel per step
    (set to baseline_value across channels) in relevance order and average
    the class-score drops over k = 0..steps."""
    x = np.asarray(x, dtype=np.float64)
    spatial = values.reshape(-1).size
    if steps < 0 or steps > spatial:
        raise ValueError("steps must be in [0, pixel count]")
    order = _spatial_order(values, most_relevant_first)

    def score(img):
        logits, probs = forward(net, img)
        return float(logits[y]) if on_logits else float(probs[y])

    base = np.broadcast_to(np.asarray(baseline_value, dtype=np.float64),
                           x.shape if x.ndim != 3 else (x.shape[0],))
    cur = x.copy()
    s0 = score(cur)
    total = 0.0  # k = 0 term is zero
    for k in range(1, steps + 1):
        p = order[k - 1]
        if cur.ndim == 3:
            h, w = cur.shape[1], cur.shape[2]
            cur[:, p // w, p % w] = base
        else:
            cur.reshape(-1)[p] = np.asarray(baseline_value, dtype=np.float64)
        total += s0 - score(cur)
    return total / (steps + 1)


def aopc_morf(net, x, values, y, steps, baseline_value, on_logits=False):
    return aopc(net, x, values, y, steps, baseline_value, on_logits, most_relevant_first=True)


def aopc_lerf(net, x, values, y, steps, baseline_value, on_logits=False):
    return aopc(net, x, values, y, steps, baseline_value, on_logits, most_relevant_first=False)


# --- ground-truth scoring ---------------------------------------------------

def _quantile_ternary_prediction(values: np.ndarray, q2: float, q1: float) -> np.ndarray:
    flat = np.abs(values.reshape(-1))
    n = flat.size
    n2 = int(np.rint(q2 * n))
    n1 = int(np.rint(q1 * n))
    order = np.argsort(-flat, kind="stable")
    pred = np.zeros(n, dtype=np.int64)
    pred[order[:n2]] = 2
    pred[order[n2:n2 + n1]] = 1
    return pred


def five_band_scores(values: np.ndarray, mask: np.ndarray, q2: float, q1: float):
    """Ternary pixel scores (percent): accuracy, macro recall, macro
    precision, and background false-positive rate. The predicted ternary
    mask labels the top-q2 fraction of |map| as distinguishing and the
    next q1 fraction as localization."""
    if q2 + q1 > 1:
        raise ValueError("q2 + q1 must be <= 1")
    truth = np.asarray(mask).reshape(-1).astype(np.int64)
    pred = _quantile_ternary_prediction(np.asarray(values, dtype=np.float64), q2, q1)
    if truth.size != pred.size:
        raise ValueError("map and mask sizes differ")
    acc = 100.0 * float(np.mean(pred == truth))
    recalls, precisions = [], []
    for cls in (0, 1, 2):
        tp = float(np.sum((pred == cls) & (truth == cls)))
        if np.any(truth == cls):
            recalls.append(100.0 * tp / np.sum(truth == cls))
        if np.any(pred == cls):
            precisions.append(100.0 * tp / np.sum(pred == cls))
    recall = float(np.mean(recalls)) if recalls else 0.0
    precision = float(np.mean(precisions)) if precisions else 0.0
    bg = truth == 0
    fpr = 100.0 * float(np.sum(bg & (pred != 0)) / max(np.sum(bg), 1))
    return acc, recall, precision, fpr


def binary_scores(values: np.ndarray, mask: np.ndarray, q: float):
    """Binary pixel scores (percent) with distinguishing (label 2) as the
    positive class and the top-q fraction of |map| as positive predictions."""
    truth = (np.asarray(mask).reshape(-1) == 2)
    flat = np.abs(np.asarray(values, dtype=np.float64).reshape(-1))
    if truth.size != flat.size:
        raise ValueError("map and mask sizes differ")
    n = flat.size
    npos = int(np.rint(q * n))
    order = np.argsort(-flat, kind="stable")
    pred = np.zeros(n, dtype=bool)
    pred[order[:npos]] = True
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    acc = 100.0 * float(np.mean(pred == truth))
    recall = 100.0 * tp / max(truth.sum(), 1)
    precision = 100.0 * tp / npos if npos else 0.0
    fpr = 100.0 * fp / max((~truth).sum(), 1)
    return acc, recall, precision, fpr


# --- retraining-based interpretability --------------------------------------

def _mask_pixels(image: np.ndarray, values: np.ndarray, k_fraction: float,
                 fill, top: bool) -> np.ndarray:
    order = _spatial_order(values, most_relevant_first=top)
    n = values.reshape(-1).size
    count = int(np.rint(k_fraction * n))
    out = np.asarray(image, dtype=np.float64).copy()
    if count == 0:
        return out
    sel = order[:count]
    if out.ndim == 3:
        w = out.shape[2]
        out[:, sel // w, sel % w] = np.asarray(fill).reshape(-1, 1)
    else:
        out.reshape(-1)[sel] = fill
    return out


def diffroar(train_set, test_set, train_maps, test_maps, k_fractions,
             make_net, retrain, seeds=(0,)):
    """DiffROAR: retrained accuracy (percent) on bottom-k-masked data minus
    top-k-masked data, per k, averaged over retrain seeds.

    `make_net(seed)` builds a fresh network, `retrain(net, dataset, seed)`
    returns (net, report). Masked pixels are filled with the per-channel
    training-set mean. Positive values mean the map's top pixels carried
    more predictive signal.
    """
    from structgrad.training import evaluate

    images = np.stack([s.image for s in train_set])
    fill = images.mean(axis=tuple(i for i in range(images.ndim) if i != 1)) \
        if images.ndim == 4 else images.mean()

    class _Masked:
        def __init__(self, image, label):
            self.image = image
            self.label = label

    results = {}
    for k in k_fractions:
        if k == 0:
            results[k] = 0.0
            continue
        diffs = []
        for seed in seeds:
            accs = {}
            for top in (True, False):
                tr = [_Masked(_mask_pixels(s.image, m, k, fill, top), s.label)
                      for s, m in zip(train_set, train_maps)]
                te = [_Masked(_mask_pixels(s.image, m, k, fill, top), s.label)
                      for s, m in zip(test_set, test_maps)]
                net, _ = retrain(make_net(seed), tr, seed)
                _, accs[top] = evaluate(net, te)
            diffs.append(100.0 * (accs[False] - accs[True]))
        results[k] = float(np.mean(diffs))
    return results


# --- interpretation attack --------------------------------------------------

@dataclass
class AttackResult:
    x_adv: np.ndarray
    rho: np.ndarray
    topk_intersection: float
    ssim: float
    objective: float


def interp_attack(net: Network, x: np.ndarray, budget: float, steps: int,
                  seed: int, k_fraction: float = 0.4) -> AttackResult:
    """L2-bounded attack on the saliency map, maximizing the drop in top-k
    intersection with the original map via simultaneous-perturbation
    stochastic ascent. Steps that change the prediction or decrease the
    objective are rejected, so the objective is non-decreasing and the
    prediction is preserved."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    _, probs = forward(net, x)
    label = int(np.argmax(probs))
    base_map = simple_grad(net, x, label).values
    if not np.any(base_map):
        raise ValueError("saliency map of the unperturbed input is all-zero; "
                         "nothing to attack")

    def objective(rho):
        m = simple_grad(net, x + rho, label).values
        if not np.any(m):
            return 1.0
        return 1.0 - topk_intersection(base_map, m, k_fraction)

    def proj(rho):
        norm = np.linalg.norm(rho.reshape(-1))
        if norm > budget:
            rho = rho * (budget / norm) if budget > 0 else np.zeros_like(rho)
        return rho

    rho = np.zeros_like(x)
    if budget == 0 or steps == 0:
        m = simple_grad(net, x, label).values
        return AttackResult(x.copy(), rho, 1.0, 1.0, 0.0)

    rng = make_rng(seed, 5)
    cur_obj = objective(rho)
    c = 0.1 * budget
    a = 0.25 * budget
    for _ in range(steps):
        direction = rng.choice([-1.0, 1.0], size=x.shape)
        j_plus = objective(proj(rho + c * direction))
        j_minus = objective(proj(rho - c * direction))
        if j_plus == j_minus:
            continue
        step = a * np.sign(j_plus - j_minus) * direction
        cand = proj(rho + step)
        _, p = forward(net, x + cand)
        if int(np.argmax(p)) != label:
            continue
        cand_obj = objective(cand)
        if cand_obj >= cur_obj:
            rho, cur_obj = cand, cand_obj
    final_map = simple_grad(net, x + rho, label).values
    inter = 1.0 - cur_obj
    return AttackResult(x + rho, rho, inter, ssim(base_map, final_map), cur_obj)


# --- sanity checks -----------------------------------------------------------

def cascading_randomization(net: Network, x: np.ndarray, c: int, seed: int = 0):
    """Progressively re-initialize parameterized layers from the output
    toward the input; after each, SSIM of the new map vs. the original.
    The leading (-1, 1.0) row is the nothing-randomized control."""
    original = simple_grad(net, x, c).values
    out = [(-1, 1.0)]
    current = net
    indices = list(reversed(parameterized_layer_indices(net)))
    for j, idx in enumerate(indices):
        current = reinit_layer(current, idx, make_rng(seed, 6, j))
        randomized = simple_grad(current, x, c).values
        out.append((idx, ssim(original, randomized)))
    return out
