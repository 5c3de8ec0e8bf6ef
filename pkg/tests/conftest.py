"""Shared fixtures and numerical helpers for the test suite."""

import numpy as np
import pytest

from structgrad.engine import (
    Activation,
    Dense,
    Flatten,
    Network,
    backward,
    glorot_conv,
    glorot_dense,
    make_convnet,
    make_mlp,
)
from structgrad.rng import make_rng
from structgrad.synth import SynthConfig, gen_dataset, with_attention


def finite_diff_gradients(net, x, y, step=1e-6):
    """Central-difference gradients of the loss for every parameter and the
    input; the independent oracle for reverse-mode correctness."""
    base = backward(net, x, y)

    def loss_with(layers, xx):
        return backward(Network(layers, net.class_count), xx, y).loss_value

    param_fd = []
    for li, layer in enumerate(net.layers):
        params = layer.params()
        if not params:
            param_fd.append(None)
            continue
        grads = []
        for pi, p in enumerate(params):
            g = np.zeros_like(p)
            flat = p.reshape(-1)
            for idx in range(flat.size):
                for sign in (+1, -1):
                    newp = p.copy().reshape(-1)
                    newp[idx] += sign * step
                    plist = list(params)
                    plist[pi] = newp.reshape(p.shape)
                    layers = list(net.layers)
                    layers[li] = layer.with_params(tuple(plist))
                    if sign > 0:
                        up = loss_with(layers, x)
                    else:
                        down = loss_with(layers, x)
                g.reshape(-1)[idx] = (up - down) / (2 * step)
            grads.append(g)
        param_fd.append(tuple(grads))

    input_fd = np.zeros_like(np.asarray(x, dtype=np.float64))
    flat = input_fd.reshape(-1)
    xflat = np.asarray(x, dtype=np.float64).copy()
    for idx in range(flat.size):
        for sign in (+1, -1):
            xx = xflat.copy().reshape(-1)
            xx[idx] += sign * step
            val = backward(net, xx.reshape(np.shape(x)), y).loss_value
            if sign > 0:
                up = val
            else:
                down = val
        flat[idx] = (up - down) / (2 * step)
    return base, param_fd, input_fd


def max_rel_error(analytic, numeric, floor=1e-4):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = np.maximum(np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom))


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small deterministic synthetic dataset shared across tests."""
    cfg = SynthConfig(class_count=4, train_count=48, test_count=16, seed=123)
    data = gen_dataset(cfg)
    return data[:48], data[48:]


@pytest.fixture(scope="session")
def tiny_attention_dataset():
    cfg = SynthConfig(class_count=4, train_count=32, test_count=8, seed=321)
    data = with_attention(gen_dataset(cfg))
    return data[:32], data[32:]


@pytest.fixture()
def small_mlp():
    return make_mlp(make_rng(0, 20), 8, [6], 3, "softplus")


@pytest.fixture()
def small_convnet():
    return make_convnet(make_rng(0, 20), (1, 12, 12), 3, "softplus")


def random_small_net(seed, activation="softplus"):
    """Randomized tiny architecture for property-style gradient checks."""
    rng = make_rng(seed, 90)
    kind = seed % 3
    if kind == 0:
        return make_mlp(rng, 6, [5], 3, activation), (6,)
    if kind == 1:
        return make_mlp(rng, 9, [7, 5], 4, activation), (9,)
    net = Network(
        [
            glorot_conv(rng, 1, 3, 3, stride=2, padding="same"),
            Activation(activation),
            Flatten(),
            glorot_dense(rng, 3 * 4 * 4, 3),
        ],
        3,
    )
    return net, (1, 7, 7)
