"""Training procedures: standard, one-step and iterative norm-regularized
adversarial training, the Gaussian-noise baseline, and attention
harmonization. One run is single-threaded and fully determined by the
config seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from structgrad.engine import Network, average_gradients, backward, forward, sgd_step
from structgrad.rng import make_rng
from structgrad.rules import (
    BALL_RULES,
    ElasticNet,
    GroupBall,
    LinfBall,
    PerturbRule,
    WeightedL2,
    argmax_perturb,
    harmonization_weights,
    project,
)

# penalty-rule ascent can wander on near-flat losses; keep |delta| bounded
DELTA_CAP = 1.0


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    rule: PerturbRule | None = None
    protocol: str = "standard"  # standard | fast | iterative | noise
    iter_steps: int = 7
    iter_step_size: float = 0.3
    noise_sigma: float = 0.0
    harmonize_eps: float = 0.0
    optimizer: str = "sgd"  # sgd | adam
    record_perturbations: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.protocol not in ("standard", "fast", "iterative", "noise"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.protocol in ("fast", "iterative") and self.rule is None:
            raise ValueError(f"{self.protocol} protocol requires a perturbation rule")


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    epoch_accuracies: list = field(default_factory=list)
    final_test_accuracy: float | None = None
    wall_clock: float = 0.0
    seed: int = 0
    cap_hits: int = 0
    perturbations: list | None = None


def evaluate(net: Network, dataset) -> tuple[float, float]:
    """Mean clean cross-entropy loss and accuracy over a dataset."""
    losses = []
    correct = 0
    for s in dataset:
        logits, probs = forward(net, s.image)
        losses.append(-np.log(max(probs[s.label], 1e-300)))
        if int(np.argmax(probs)) == s.label:
            correct += 1
    return float(np.mean(losses)), correct / len(dataset)


class _Adam:
    """Adam with bias correction; state keyed by (layer, param) index."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, net: Network, grads, lr: float) -> Network:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        new_layers = []
        for li, (layer, pg) in enumerate(zip(net.layers, grads)):
            params = layer.params()
            if not params:
                new_layers.append(layer)
                continue
            updated = []
            for pi, (p, g) in enumerate(zip(params, pg)):
                m = self.m.setdefault((li, pi), np.zeros_like(p))
                v = self.v.setdefault((li, pi), np.zeros_like(p))
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                updated.append(p - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
            new_layers.append(layer.with_params(tuple(updated)))
        return Network(new_layers, net.class_count)


def _penalty_grad(rule, delta):
    d = delta.reshape(-1)
    if isinstance(rule, ElasticNet):
        g = np.sign(d) * np.maximum(np.abs(d) - rule.eps1, 0.0) / (2.0 * rule.eps2)
    elif isinstance(rule, WeightedL2) and rule.variant == "dual_valid":
        g = d / (2.0 * rule.eps * rule.weights.reshape(-1))
    else:
        raise ValueError(f"no penalty gradient for {rule!r}")
    return g.reshape(delta.shape)


def _ascent_scale(rule) -> float:
    """Step length unit commensurate with the one-step maximizer magnitude."""
    if isinstance(rule, (LinfBall, GroupBall)):
        return rule.eps
    if isinstance(rule, ElasticNet):
        return rule.eps1 + 2.0 * rule.eps2
    if isinstance(rule, WeightedL2):
        return 2.0 * rule.eps * float(np.abs(rule.weights).max())
    raise TypeError(f"unknown rule {rule!r}")


def inner_ascent(loss_grad_fn, rule: PerturbRule, delta0: np.ndarray,
                 steps: int, step_size: float) -> tuple[np.ndarray, int]:
    """Iterative maximization of L(x+delta) - h(delta) from delta0.

    Ball rules take normalized ascent steps (sign direction for the
    L-infinity ball, per-group unit-L2 otherwise) followed by projection.
    Penalty rules take plain gradient-ascent steps on the penalized
    objective with the loss gradient L2-normalized; no projection, but
    |delta| is capped at DELTA_CAP. Returns (delta, cap_hit_count).
    """
    delta = np.asarray(delta0, dtype=np.float64).copy()
    alpha = step_size * _ascent_scale(rule)
    cap_hits = 0
    for _ in range(steps):
        g = loss_grad_fn(delta)
        if isinstance(rule, LinfBall):
            delta = project(rule, delta + alpha * np.sign(g))
        elif isinstance(rule, GroupBall):
            direction = np.zeros_like(g).reshape(-1)
            gv = g.reshape(-1)
            for grp in rule.groups:
                idx = list(grp)
                norm = np.linalg.norm(gv[idx])
                if norm > 0:
                    direction[idx] = gv[idx] / norm
            delta = project(rule, delta + alpha * direction.reshape(g.shape))
        else:
            norm = np.linalg.norm(g.reshape(-1))
            loss_dir = g / norm if norm > 0 else np.zeros_like(g)
            delta = delta + alpha * (loss_dir - _penalty_grad(rule, delta))
            if np.abs(delta).max() > DELTA_CAP:
                cap_hits += 1
                delta = np.clip(delta, -DELTA_CAP, DELTA_CAP)
    return delta, cap_hits


def _run(net, dataset, cfg: TrainConfig, delta_fn, test_set=None):
    if not dataset:
        raise ValueError("dataset is empty")
    for s in dataset:
        if not 0 <= s.label < net.class_count:
            raise ValueError(f"label {s.label} out of range")
    rng = make_rng(cfg.seed, 1)
    if cfg.optimizer == "adam":
        adam = _Adam()
        update = lambda n_, g_: adam.step(n_, g_, cfg.learning_rate)
    else:
        update = lambda n_, g_: sgd_step(n_, g_, cfg.learning_rate)
    report = TrainReport(seed=cfg.seed)
    if cfg.record_perturbations:
        report.perturbations = []
    start = time.perf_counter()
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b0 in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in order[b0:b0 + cfg.batch_size]]
            grads = []
            for s in batch:
                delta, hits = delta_fn(net, s, rng)
                report.cap_hits += hits
                if cfg.record_perturbations:
                    report.perturbations.append(delta.copy() if delta is not None else None)
                x = s.image if delta is None else s.image + delta
                lg = backward(net, x, s.label)
                if not np.isfinite(lg.loss_value):
                    raise TrainingDivergedError(
                        f"loss diverged at epoch {epoch}, batch starting {b0}"
                    )
                epoch_loss += lg.loss_value
                grads.append(lg.param_grads)
            net = update(net, average_gradients(grads))
        _, acc = evaluate(net, dataset)
        report.epoch_losses.append(epoch_loss / n)
        report.epoch_accuracies.append(acc)
    if test_set:
        _, report.final_test_accuracy = evaluate(net, test_set)
    report.wall_clock = time.perf_counter() - start
    return net, report


def train_standard(net, dataset, cfg: TrainConfig, test_set=None):
    return _run(net, dataset, cfg, lambda n, s, r: (None, 0), test_set)


def train_fast_at(net, dataset, cfg: TrainConfig, test_set=None):
    """One-step adversarial training: perturb by the closed-form maximizer
    of the first-order model at the clean input. With the L-infinity
    ball this is exactly FGSM."""
    if cfg.rule is None:
        raise ValueError("fast adversarial training requires a rule")

    def delta_fn(current, s, r):
        g = backward(current, s.image, s.label).input_grad
        return argmax_perturb(cfg.rule, g), 0

    return _run(net, dataset, cfg, delta_fn, test_set)


def train_iterative_at(net, dataset, cfg: TrainConfig, test_set=None):
    """PGD-style training: analytic initialization, then iter_steps ascent
    steps on the (penalized) adversarial objective."""
    if cfg.rule is None:
        raise ValueError("iterative adversarial training requires a rule")

    def delta_fn(current, s, r):
        g0 = backward(current, s.image, s.label).input_grad
        delta0 = argmax_perturb(cfg.rule, g0)
        grad_fn = lambda d: backward(current, s.image + d, s.label).input_grad
        return inner_ascent(grad_fn, cfg.rule, delta0, cfg.iter_steps, cfg.iter_step_size)

    return _run(net, dataset, cfg, delta_fn, test_set)


def train_noise(net, dataset, cfg: TrainConfig, test_set=None):
    """Gaussian-noise baseline: i.i.d. noise of std noise_sigma on inputs."""
    if cfg.noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")

    def delta_fn(current, s, r):
        if cfg.noise_sigma == 0:
            return None, 0
        return cfg.noise_sigma * r.standard_normal(s.image.shape), 0

    return _run(net, dataset, cfg, delta_fn, test_set)


def train_harmonize(net, dataset, cfg: TrainConfig, test_set=None):
    """Attention harmonization: perturb along (eps*max(A) - 2*eps*A) times
    the L2-normalized loss gradient. Pixels above half the attention peak
    move against the gradient (score amplification), the rest along it."""
    eps = cfg.harmonize_eps
    if eps < 0:
        raise ValueError("harmonize_eps must be >= 0")

    def delta_fn(current, s, r):
        if getattr(s, "attention", None) is None:
            raise ValueError("harmonization training requires attention maps on every sample")
        if eps == 0:
            return None, 0
        g = backward(current, s.image, s.label).input_grad
        weights = np.broadcast_to(harmonization_weights(s.attention), s.image.shape)
        rule = WeightedL2(eps, weights, variant="empirical")
        return argmax_perturb(rule, g), 0

    return _run(net, dataset, cfg, delta_fn, test_set)


TRAINERS = {
    "standard": train_standard,
    "fast": train_fast_at,
    "iterative": train_iterative_at,
    "noise": train_noise,
}
