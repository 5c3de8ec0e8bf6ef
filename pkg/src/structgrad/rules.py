"""Perturbation regularizers, their conjugates, maximizers, and grid oracles.

Each rule pairs a penalty h on the perturbation with the closed-form
value of sup_delta { delta.g - h(delta) } on a gradient g, the
maximizing perturbation, and (for ball rules) the projection. The
`brute_force_conj` grid oracle certifies the closed forms numerically;
it evaluates the raw objective on a dense grid and never consults the
closed-form expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from structgrad.engine import Network, backward, smoothness_bound


@dataclass(frozen=True)
class LinfBall:
    """h = indicator of the L-infinity ball of radius eps."""
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class GroupBall:
    """h = indicator of {max over groups of per-group L2 norm <= eps}."""
    eps: float
    groups: tuple  # tuple of tuples of flat indices, disjoint, covering 0..d-1

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValueError("groups must be disjoint")
        if set(flat) != set(range(len(flat))):
            raise ValueError("groups must cover indices 0..d-1 exactly")

    @property
    def dim(self):
        return sum(len(g) for g in self.groups)


@dataclass(frozen=True)
class ElasticNet:
    """h = sum of piecewise-quadratic penalties with dead zone [-eps1, eps1]."""
    eps1: float
    eps2: float

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("eps1 and eps2 must be positive")


@dataclass(frozen=True)
class WeightedL2:
    """h = (1/4eps) * || delta / sqrt(weights) ||_2^2 for positive weights.

    variant "dual_valid" keeps strictly positive weights so the conjugate
    identity is certifiable; variant "empirical" allows signed weights
    built from an attention map and is used only through its one-step
    perturbation formula (L2-normalized gradient).
    """
    eps: float
    weights: np.ndarray
    variant: str = "dual_valid"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.variant not in ("dual_valid", "empirical"):
            raise ValueError(f"unknown variant {self.variant!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if self.variant == "dual_valid" and not np.all(w > 0):
            raise ValueError("dual_valid variant requires strictly positive weights")
        object.__setattr__(self, "weights", w)


PerturbRule = LinfBall | GroupBall | ElasticNet | WeightedL2

BALL_RULES = (LinfBall, GroupBall)


def harmonization_weights(attention: np.ndarray) -> np.ndarray:
    """Empirical weight map 0.5*max(A) - A: negative on high-attention pixels."""
    a = np.asarray(attention, dtype=np.float64)
    return 0.5 * a.max() - a


def dual_valid_weights(attention: np.ndarray, sigma: float | None = None) -> np.ndarray:
    """Positive weight map max(A) - A + sigma (default sigma: 1% of max(A))."""
    a = np.asarray(attention, dtype=np.float64)
    if sigma is None:
        sigma = 0.01 * float(a.max())
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return a.max() - a + sigma


def _check_dim(rule, g):
    if isinstance(rule, GroupBall) and g.size != rule.dim:
        raise ValueError(f"gradient size {g.size} does not match group cover of {rule.dim}")
    if isinstance(rule, WeightedL2) and g.shape != rule.weights.shape:
        raise ValueError(f"gradient shape {g.shape} does not match weights {rule.weights.shape}")


def pq_value(z, eps1: float, eps2: float):
    """Piecewise-quadratic penalty: 0 on [-eps1, eps1], (|z|-eps1)^2/(4 eps2) outside."""
    if eps1 < 0 or eps2 <= 0:
        raise ValueError("requires eps1 >= 0 and eps2 > 0")
    z = np.asarray(z, dtype=np.float64)
    excess = np.maximum(np.abs(z) - eps1, 0.0)
    out = excess * excess / (4.0 * eps2)
    return float(out) if out.ndim == 0 else out


def penalty_value(rule: PerturbRule, delta: np.ndarray) -> float:
    """h(delta). Infinite outside the ball for ball rules."""
    d = np.asarray(delta, dtype=np.float64).reshape(-1)
    # boundary points count as feasible up to float rounding
    tol = 1e-12
    if isinstance(rule, LinfBall):
        return 0.0 if np.all(np.abs(d) <= rule.eps * (1 + tol)) else math.inf
    if isinstance(rule, GroupBall):
        _check_dim(rule, d)
        ok = all(np.linalg.norm(d[list(g)]) <= rule.eps * (1 + tol) for g in rule.groups)
        return 0.0 if ok else math.inf
    if isinstance(rule, ElasticNet):
        return float(np.sum(pq_value(d, rule.eps1, rule.eps2)))
    if isinstance(rule, WeightedL2):
        if rule.variant != "dual_valid":
            raise ValueError("empirical WeightedL2 has no certified penalty form")
        w = rule.weights.reshape(-1)
        return float(np.sum(d * d / w) / (4.0 * rule.eps))
    raise TypeError(f"unknown rule {rule!r}")


def conj_value(rule: PerturbRule, g: np.ndarray) -> float:
    """Closed-form sup_delta { delta.g - h(delta) }."""
    gv = np.asarray(g, dtype=np.float64).reshape(-1)
    if isinstance(rule, LinfBall):
        return rule.eps * float(np.sum(np.abs(gv)))
    if isinstance(rule, GroupBall):
        _check_dim(rule, gv)
        return rule.eps * float(sum(np.linalg.norm(gv[list(grp)]) for grp in rule.groups))
    if isinstance(rule, ElasticNet):
        return rule.eps1 * float(np.sum(np.abs(gv))) + rule.eps2 * float(np.sum(gv * gv))
    if isinstance(rule, WeightedL2):
        _check_dim(rule, np.asarray(g))
        if rule.variant != "dual_valid":
            raise ValueError("empirical WeightedL2 has no certified conjugate")
        return rule.eps * float(np.sum(rule.weights.reshape(-1) * gv * gv))
    raise TypeError(f"unknown rule {rule!r}")


def argmax_perturb(rule: PerturbRule, g: np.ndarray) -> np.ndarray:
    """Closed-form maximizer of delta.g - h(delta); zero blocks map to zero."""
    garr = np.asarray(g, dtype=np.float64)
    gv = garr.reshape(-1)
    if isinstance(rule, LinfBall):
        return (rule.eps * np.sign(gv)).reshape(garr.shape)
    if isinstance(rule, GroupBall):
        _check_dim(rule, gv)
        delta = np.zeros_like(gv)
        for grp in rule.groups:
            idx = list(grp)
            norm = np.linalg.norm(gv[idx])
            if norm > 0:
                delta[idx] = rule.eps * gv[idx] / norm
        return delta.reshape(garr.shape)
    if isinstance(rule, ElasticNet):
        return (rule.eps1 * np.sign(gv) + 2.0 * rule.eps2 * gv).reshape(garr.shape)
    if isinstance(rule, WeightedL2):
        _check_dim(rule, garr)
        w = rule.weights.reshape(-1)
        if rule.variant == "dual_valid":
            return (2.0 * rule.eps * w * gv).reshape(garr.shape)
        norm = np.linalg.norm(gv)
        if norm == 0:
            return np.zeros_like(garr)
        return (2.0 * rule.eps * w * (gv / norm)).reshape(garr.shape)
    raise TypeError(f"unknown rule {rule!r}")


def project(rule: PerturbRule, delta: np.ndarray) -> np.ndarray:
    """Project onto the feasible ball. Penalty rules have no projection."""
    darr = np.asarray(delta, dtype=np.float64)
    if isinstance(rule, LinfBall):
        return np.clip(darr, -rule.eps, rule.eps)
    if isinstance(rule, GroupBall):
        dv = darr.reshape(-1)
        _check_dim(rule, dv)
        out = dv.copy()
        for grp in rule.groups:
            idx = list(grp)
            norm = np.linalg.norm(out[idx])
            if norm > rule.eps:
                out[idx] *= rule.eps / norm
        return out.reshape(darr.shape)
    raise ValueError(f"{type(rule).__name__} is a penalty rule and has no projection")


# --- grid oracle ------------------------------------------------------------

_GRID_BUDGET = 10**8


def _blocks(rule: PerturbRule, d: int):
    if isinstance(rule, GroupBall):
        return [list(g) for g in rule.groups]
    return [[i] for i in range(d)]


def _block_penalty(rule, block, pts):
    """h restricted to one separable block; pts has shape (n, len(block))."""
    if isinstance(rule, LinfBall):
        feasible = np.all(np.abs(pts) <= rule.eps, axis=1)
        return np.where(feasible, 0.0, np.inf)
    if isinstance(rule, GroupBall):
        feasible = np.linalg.norm(pts, axis=1) <= rule.eps
        return np.where(feasible, 0.0, np.inf)
    if isinstance(rule, ElasticNet):
        return pq_value(pts[:, 0], rule.eps1, rule.eps2)
    if isinstance(rule, WeightedL2):
        w = rule.weights.reshape(-1)[block[0]]
        return pts[:, 0] ** 2 / (4.0 * rule.eps * w)
    raise TypeError(f"unknown rule {rule!r}")


def brute_force_conj(rule: PerturbRule, g: np.ndarray, grid_bound: float,
                     grid_steps: int) -> float:
    """Grid maximization of delta.g - h(delta), independent of the closed forms.

    h is separable across coordinates (or across groups for the group
    ball), so the grid search runs per separable block; the objective is
    still evaluated through the raw penalty. Rejects blocks whose grid
    would exceed the evaluation budget.
    """
    gv = np.asarray(g, dtype=np.float64).reshape(-1)
    d = gv.size
    if d > 8:
        raise ValueError(f"grid oracle limited to small dimensions, got d={d}; "
                         "use the closed form instead")
    if isinstance(rule, WeightedL2) and rule.variant != "dual_valid":
        raise ValueError("empirical WeightedL2 has no penalty to brute-force")
    axis = np.linspace(-grid_bound, grid_bound, grid_steps)
    total = 0.0
    for block in _blocks(rule, d):
        dim = len(block)
        if grid_steps ** dim > _GRID_BUDGET:
            raise ValueError(f"grid of {grid_steps}^{dim} points exceeds budget; "
                             "reduce grid_steps or group size, or use the closed form")
        gb = gv[block]
        best = -math.inf
        if dim <= 2:
            chunks = [np.stack([m.reshape(-1) for m in np.meshgrid(*([axis] * dim), indexing="ij")], axis=1)]
        else:
            # peel off leading axes one value at a time to bound memory
            inner = np.stack([m.reshape(-1) for m in np.meshgrid(*([axis] * (dim - 1)), indexing="ij")], axis=1)
            chunks = (np.concatenate([np.full((inner.shape[0], 1), v), inner], axis=1) for v in axis)
        for pts in chunks:
            obj = pts @ gb - _block_penalty(rule, block, pts)
            m = float(np.max(obj))
            if m > best:
                best = m
        total += best
    return total


# --- first-order approximation check ---------------------------------------

def first_order_gap(loss_at, grad_at_x, x, delta):
    """|L(x+delta) - L(x) - delta.grad| for a scalar loss callable."""
    lin = float(np.sum(np.asarray(delta) * np.asarray(grad_at_x)))
    return abs(loss_at(np.asarray(x) + np.asarray(delta)) - loss_at(np.asarray(x)) - lin)


def taylor_gap(net: Network, x: np.ndarray, y: int, delta: np.ndarray):
    """First-order Taylor error of the loss vs. the smoothness bound.

    Returns (gap, bound) with bound = lambda * ||delta||_2^2 / 2 using the
    engine-computed smoothness constant; requires softplus activations.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    lam = smoothness_bound(net, x.shape)
    base = backward(net, x, y)
    gap = first_order_gap(lambda z: backward(net, z, y).loss_value, base.input_grad, x, delta)
    eps = float(np.linalg.norm(delta.reshape(-1)))
    bound = 0.5 * lam * eps * eps
    if gap > bound * (1 + 1e-9) + 1e-12:
        raise AssertionError(f"Taylor gap {gap} exceeds smoothness bound {bound}")
    return gap, bound


def make_patch_groups(height: int, width: int, channels: int, patch_size: int):
    """Disjoint cover of flat (C,H,W) indices by spatial patches spanning channels.

    Edge patches are truncated when patch_size does not divide the image.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    groups = []
    for i0 in range(0, height, patch_size):
        for j0 in range(0, width, patch_size):
            idx = []
            for c in range(channels):
                for i in range(i0, min(i0 + patch_size, height)):
                    for j in range(j0, min(j0 + patch_size, width)):
                        idx.append(c * height * width + i * width + j)
            groups.append(tuple(idx))
    return tuple(groups)
