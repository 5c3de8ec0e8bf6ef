"""Norm-regularized adversarial training for structured gradient saliency maps."""

from structgrad.engine import (
    Activation,
    Conv2d,
    Dense,
    Flatten,
    LossGradients,
    Network,
    backward,
    forward,
    input_saliency,
    load_network,
    save_network,
    sgd_step,
    smoothness_bound,
)
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
    pq_value,
    project,
    taylor_gap,
)

__all__ = [
    "Activation",
    "Conv2d",
    "Dense",
    "ElasticNet",
    "Flatten",
    "GroupBall",
    "LinfBall",
    "LossGradients",
    "Network",
    "WeightedL2",
    "argmax_perturb",
    "backward",
    "brute_force_conj",
    "conj_value",
    "forward",
    "input_saliency",
    "load_network",
    "make_patch_groups",
    "penalty_value",
    "pq_value",
    "project",
    "save_network",
    "sgd_step",
    "smoothness_bound",
    "taylor_gap",
]
