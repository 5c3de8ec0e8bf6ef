"""Desk-scale synthetic classification data with ternary ground-truth
saliency masks and optional synthetic attention maps.

Each image carries one class-defining small shape (the distinguishing
region, mask label 2) drawn inside a larger low-contrast blob (the
localization region, mask label 1) on a class-independent random
background (label 0). The label depends only on the shape; geometry,
label, and background draw from separate seeded streams so backgrounds
can be resampled without touching labels.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from structgrad.rng import make_rng
from structgrad.tensorio import load_tensor, save_tensor

SHAPE_NAMES = ("circle", "square", "triangle", "cross", "diamond", "ring")

_BG_KINDS = ("dark", "blurredNoise", "whiteNoise", "mixed")

# stream tags for the per-sample generators
_LABEL, _GEOM, _BG = 11, 12, 13


@dataclass
class SynthSample:
    image: np.ndarray              # (C, H, W) in [0, 1]
    label: int
    mask: np.ndarray               # (H, W) ints in {0, 1, 2}
    attention: np.ndarray | None = None  # (H, W), nonnegative, max 1


@dataclass
class SynthConfig:
    class_count: int = 4
    train_count: int = 2000
    test_count: int = 500
    image_size: int = 32
    channels: int = 1
    background_kind: str = "mixed"
    seed: int = 0
    shape_scale_range: tuple = (4, 6)
    contrast_levels: tuple = (0.6, 0.9)
    blob_scale_range: tuple = (1.8, 2.2)
    blob_contrast: float = 0.15

    def __post_init__(self):
        if self.train_count < 1 or self.test_count < 0:
            raise ValueError("counts must be >= 1 train / >= 0 test")
        if self.class_count > len(SHAPE_NAMES):
            raise ValueError(f"at most {len(SHAPE_NAMES)} classes supported")
        if self.background_kind not in _BG_KINDS:
            raise ValueError(f"background_kind must be one of {_BG_KINDS}")
        max_r = self.shape_scale_range[1] * self.blob_scale_range[1]
        if self.image_size < 2 * max_r + 2:
            raise ValueError("image too small to place the configured shapes")


def _shape_mask(name: str, size: int, ci: float, cj: float, r: float) -> np.ndarray:
    ii, jj = np.mgrid[0:size, 0:size].astype(np.float64)
    di, dj = ii - ci, jj - cj
    if name == "circle":
        return di**2 + dj**2 <= r**2
    if name == "square":
        return (np.abs(di) <= r * 0.85) & (np.abs(dj) <= r * 0.85)
    if name == "triangle":
        return (di >= -r) & (di <= r) & (np.abs(dj) <= (di + r) / 2.0)
    if name == "cross":
        arm = max(r / 2.5, 1.0)
        return ((np.abs(di) <= arm) & (np.abs(dj) <= r)) | ((np.abs(dj) <= arm) & (np.abs(di) <= r))
    if name == "diamond":
        return np.abs(di) + np.abs(dj) <= r * 1.2
    if name == "ring":
        rr = di**2 + dj**2
        return (rr <= r**2) & (rr >= (r * 0.5) ** 2)
    raise ValueError(f"unknown shape {name!r}")


def _background(kind: str, size: int, rng) -> np.ndarray:
    if kind == "mixed":
        kind = ("dark", "blurredNoise", "whiteNoise")[rng.integers(3)]
    if kind == "dark":
        return 0.02 + 0.05 * rng.random((size, size))
    if kind == "blurredNoise":
        raw = rng.random((size, size))
        sm = gaussian_filter(raw, sigma=2.0)
        lo, hi = sm.min(), sm.max()
        return 0.05 + 0.25 * (sm - lo) / max(hi - lo, 1e-12)
    if kind == "whiteNoise":
        return 0.3 * rng.random((size, size))
    raise ValueError(f"unknown background kind {kind!r}")


def make_sample(cfg: SynthConfig, index: int, background_seed: int | None = None) -> SynthSample:
    size = cfg.image_size
    label = int(make_rng(cfg.seed, _LABEL, index).integers(cfg.class_count))
    geom = make_rng(cfg.seed, _GEOM, index)
    bg_rng = make_rng(cfg.seed if background_seed is None else background_seed, _BG, index)

    r = geom.uniform(cfg.shape_scale_range[0], cfg.shape_scale_range[1])
    blob_r = r * geom.uniform(cfg.blob_scale_range[0], cfg.blob_scale_range[1])
    margin = blob_r + 1
    ci = geom.uniform(margin, size - 1 - margin)
    cj = geom.uniform(margin, size - 1 - margin)
    contrast = geom.uniform(cfg.contrast_levels[0], cfg.contrast_levels[1])

    bg = _background(cfg.background_kind, size, bg_rng)
    blob = _shape_mask("circle", size, ci, cj, blob_r)
    shape = _shape_mask(SHAPE_NAMES[label], size, ci, cj, r)
    shape &= blob  # keep the nesting invariant even for truncating shapes

    img2d = bg.copy()
    img2d[blob] += cfg.blob_contrast
    img2d[shape] = np.clip(bg[shape] + contrast, 0.0, 1.0)
    img2d = np.clip(img2d, 0.0, 1.0)
    image = np.repeat(img2d[None, :, :], cfg.channels, axis=0)

    mask = np.zeros((size, size), dtype=np.int64)
    mask[blob] = 1
    mask[shape] = 2
    return SynthSample(image, label, mask)


def gen_dataset(cfg: SynthConfig, background_seed: int | None = None) -> list[SynthSample]:
    """train_count + test_count samples; deterministic per seed."""
    total = cfg.train_count + cfg.test_count
    return [make_sample(cfg, i, background_seed) for i in range(total)]


def gen_attention(sample: SynthSample, focus_region: str = "distinguishing",
                  sigma_blur: float = 2.0) -> np.ndarray:
    """Region indicator blurred by a Gaussian of std sigma_blur, max-normalized."""
    if focus_region == "distinguishing":
        indicator = (sample.mask == 2).astype(np.float64)
    elif focus_region == "localization":
        indicator = (sample.mask >= 1).astype(np.float64)
    else:
        raise ValueError(f"unknown focus region {focus_region!r}")
    if not indicator.any():
        raise ValueError("focus region is empty")
    att = gaussian_filter(indicator, sigma=sigma_blur) if sigma_blur > 0 else indicator
    return att / att.max()


def with_attention(samples, focus_region="distinguishing", sigma_blur=2.0):
    return [SynthSample(s.image, s.label, s.mask,
                        gen_attention(s, focus_region, sigma_blur)) for s in samples]


def template_oracle_accuracy(samples) -> float:
    """Check that the distinguishing region determines the class: fit each
    candidate shape template (searching center offsets and radii around the
    region's bounding box) and predict the best-IoU shape."""
    offsets = (-1.0, -0.5, 0.0, 0.5, 1.0)
    radius_factors = (0.30, 0.38, 0.46, 0.54, 0.62, 0.72, 0.85)
    correct = 0
    for s in samples:
        size = s.mask.shape[0]
        region = s.mask == 2
        area = int(region.sum())
        ii, jj = np.nonzero(region)
        ci0 = (ii.min() + ii.max()) / 2.0
        cj0 = (jj.min() + jj.max()) / 2.0
        extent = max(ii.max() - ii.min(), jj.max() - jj.min()) + 1.0
        best, best_iou = 0, -1.0
        for k, name in enumerate(SHAPE_NAMES):
            for rf in radius_factors:
                r = extent * rf
                for dci in offsets:
                    for dcj in offsets:
                        tmpl = _shape_mask(name, size, ci0 + dci, cj0 + dcj, r)
                        inter = int(np.count_nonzero(tmpl & region))
                        union = area + int(np.count_nonzero(tmpl)) - inter
                        iou = inter / union if union else 0.0
                        if iou > best_iou:
                            best, best_iou = k, iou
        if best == s.label:
            correct += 1
    return correct / len(samples)


# --- persistence -------------------------------------------------------------

def _save_split(samples, out_dir: str) -> None:
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    has_attention = any(s.attention is not None for s in samples)
    if has_attention:
        os.makedirs(os.path.join(out_dir, "attention"), exist_ok=True)
    label_rows = []
    for i, s in enumerate(samples):
        save_tensor(os.path.join(out_dir, "images", f"{i:04d}.ten"), s.image)
        save_tensor(os.path.join(out_dir, "masks", f"{i:04d}.ten"), s.mask.astype(np.float64))
        if s.attention is not None:
            save_tensor(os.path.join(out_dir, "attention", f"{i:04d}.ten"), s.attention)
        label_rows.append(f"{i},{s.label}")
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="\n") as fh:
        fh.write("index,label\n" + "\n".join(label_rows) + "\n")


def split_and_save(samples, train_fraction: float, out_dir: str,
                   config_echo: str = "") -> dict:
    """Write train/ and test/ splits in the tensor layout; returns a manifest."""
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must be in (0, 1]")
    n_train = int(np.rint(train_fraction * len(samples)))
    train, test = samples[:n_train], samples[n_train:]
    try:
        _save_split(train, os.path.join(out_dir, "train"))
        if test:
            _save_split(test, os.path.join(out_dir, "test"))
        manifest = {"train_count": len(train), "test_count": len(test)}
        with open(os.path.join(out_dir, "manifest.txt"), "w", newline="\n") as fh:
            fh.write(f"train_count={len(train)}\ntest_count={len(test)}\n")
            if config_echo:
                fh.write(config_echo.rstrip("\n") + "\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset under {out_dir}: {exc}") from exc
    return manifest


def load_split(split_dir: str) -> list[SynthSample]:
    with open(os.path.join(split_dir, "labels.csv")) as fh:
        rows = fh.read().strip().split("\n")[1:]
    samples = []
    for row in rows:
        idx_s, label_s = row.split(",")
        i, label = int(idx_s), int(label_s)
        image = load_tensor(os.path.join(split_dir, "images", f"{i:04d}.ten"))
        mask = load_tensor(os.path.join(split_dir, "masks", f"{i:04d}.ten")).astype(np.int64)
        att_path = os.path.join(split_dir, "attention", f"{i:04d}.ten")
        attention = load_tensor(att_path) if os.path.exists(att_path) else None
        samples.append(SynthSample(image, label, mask, attention))
    return samples
