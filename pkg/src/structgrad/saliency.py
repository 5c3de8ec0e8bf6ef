"""Saliency map generation and post-processing baselines.

Maps are raw gradient values: no normalization happens here, only at
heatmap export time, so metrics always see unnormalized attributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from structgrad.engine import Network, input_saliency
from structgrad.rng import make_rng


@dataclass
class SaliencyMap:
    values: np.ndarray       # channel-reduced, spatial shape (H, W) or flat
    raw: np.ndarray          # unreduced gradient, input shape
    method: str
    target_class: int


def _channel_reduce(grad: np.ndarray) -> np.ndarray:
    # sum of absolute values across channels preserves attribution mass
    if grad.ndim == 3:
        return np.abs(grad).sum(axis=0)
    return np.abs(grad)


def simple_grad(net: Network, x: np.ndarray, c: int, on_logits: bool = False) -> SaliencyMap:
    """Gradient of the class-c post-softmax score w.r.t. the input."""
    grad = input_saliency(net, x, c, on_logits=on_logits)
    method = "simple_grad_logit" if on_logits else "simple_grad"
    return SaliencyMap(_channel_reduce(grad), grad, method, c)


def smooth_grad(net: Network, x: np.ndarray, c: int, n: int, sigma: float,
                seed: int, on_logits: bool = False) -> SaliencyMap:
    """Average simple gradient over n Gaussian-perturbed copies of x."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = make_rng(seed, 2)
    if sigma == 0:
        # all noisy copies coincide, so the average is the plain gradient
        grad = input_saliency(net, x, c, on_logits=on_logits)
    else:
        acc = np.zeros_like(np.asarray(x, dtype=np.float64))
        for _ in range(n):
            noisy = x + sigma * rng.standard_normal(x.shape)
            acc += input_saliency(net, noisy, c, on_logits=on_logits)
        grad = acc / n
    return SaliencyMap(_channel_reduce(grad), grad, "smooth_grad", c)


def sparsify(smap: SaliencyMap, keep_fraction: float) -> SaliencyMap:
    """Keep the ceil(keep_fraction * d) largest-magnitude entries, zero the
    rest. Ties broken toward the lowest flat index."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    values = smap.values
    flat = values.reshape(-1)
    k = int(np.ceil(keep_fraction * flat.size))
    keep = _topk_indices(flat, k)
    out = np.zeros_like(flat)
    out[keep] = flat[keep]
    return SaliencyMap(out.reshape(values.shape), smap.raw, smap.method + "+sparsified",
                       smap.target_class)


def _topk_indices(flat: np.ndarray, k: int) -> np.ndarray:
    # stable sort on magnitude descending; equal magnitudes keep index order
    order = np.argsort(-np.abs(flat), kind="stable")
    return order[:k]


def feature_vis(net: Network, c: int, steps: int, step_size: float, decay: float,
                seed: int, input_shape=None) -> np.ndarray:
    """Gradient ascent on logit_c(x) - decay * ||x||_2^2 from seeded noise,
    clamping to [0, 1] after every step."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if input_shape is None:
        raise ValueError("input_shape is required")
    rng = make_rng(seed, 3)
    x = np.clip(0.5 + 0.1 * rng.standard_normal(input_shape), 0.0, 1.0)
    for _ in range(steps):
        grad = input_saliency(net, x, c, on_logits=True) - 2.0 * decay * x
        x = np.clip(x + step_size * grad, 0.0, 1.0)
    return x
