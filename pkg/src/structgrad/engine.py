"""Minimal deterministic reverse-mode engine for small dense/conv classifiers.

Everything is float64. A network is a fixed sequence of layers; forward
evaluation caches layer inputs so one backward sweep yields exact
gradients of the cross-entropy loss with respect to every parameter and
the input. No general computation graphs, no double backprop.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from structgrad.rng import make_rng
from structgrad.tensorio import TensorFormatError

NETWORK_MAGIC = b"SGNET1\n\0"


class ShapeError(ValueError):
    pass


class NonSmoothNetworkError(ValueError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)

    def forward(self, x):
        if x.ndim != 1 or x.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"Dense expects flat input of size {self.weights.shape[1]}, got shape {x.shape}"
            )
        return self.weights @ x + self.bias

    def backward(self, x, grad_out):
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
        grad_in = self.weights.T @ grad_out
        return grad_in, (grad_w, grad_b)

    def params(self):
        return (self.weights, self.bias)

    def with_params(self, params):
        return Dense(params[0], params[1])


@dataclass
class Conv2d:
    kernels: np.ndarray  # (out_c, in_c, kh, kw)
    bias: np.ndarray     # (out_c,)
    stride: int = 1
    padding: str = "valid"  # "valid" or "same"

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding not in ("valid", "same"):
            raise ValueError(f"unknown padding mode {self.padding!r}")

    def _pad_amounts(self, h, w):
        oc, ic, kh, kw = self.kernels.shape
        s = self.stride
        if self.padding == "valid":
            if h < kh or w < kw:
                raise ShapeError(f"Conv2d kernel {kh}x{kw} larger than input {h}x{w}")
            oh = (h - kh) // s + 1
            ow = (w - kw) // s + 1
            return oh, ow, 0, 0, 0, 0
        oh = -(-h // s)
        ow = -(-w // s)
        ph = max((oh - 1) * s + kh - h, 0)
        pw = max((ow - 1) * s + kw - w, 0)
        return oh, ow, ph // 2, ph - ph // 2, pw // 2, pw - pw // 2

    def forward(self, x):
        oc, ic, kh, kw = self.kernels.shape
        if x.ndim != 3 or x.shape[0] != ic:
            raise ShapeError(f"Conv2d expects (C={ic}, H, W) input, got shape {x.shape}")
        oh, ow, pt, pb, pl, pr = self._pad_amounts(x.shape[1], x.shape[2])
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
        s = self.stride
        out = np.broadcast_to(self.bias[:, None, None], (oc, oh, ow)).copy()
        for ki in range(kh):
            for kj in range(kw):
                xs = xp[:, ki:ki + s * oh:s, kj:kj + s * ow:s]
                out += np.einsum("oc,cij->oij", self.kernels[:, :, ki, kj], xs)
        return out

    def backward(self, x, grad_out):
        oc, ic, kh, kw = self.kernels.shape
        oh, ow, pt, pb, pl, pr = self._pad_amounts(x.shape[1], x.shape[2])
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
        s = self.stride
        grad_k = np.zeros_like(self.kernels)
        grad_xp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                xs = xp[:, ki:ki + s * oh:s, kj:kj + s * ow:s]
                grad_k[:, :, ki, kj] = np.einsum("oij,cij->oc", grad_out, xs)
                grad_xp[:, ki:ki + s * oh:s, kj:kj + s * ow:s] += np.einsum(
                    "oc,oij->cij", self.kernels[:, :, ki, kj], grad_out
                )
        grad_b = grad_out.sum(axis=(1, 2))
        h, w = x.shape[1], x.shape[2]
        grad_in = grad_xp[:, pt:pt + h, pl:pl + w]
        return grad_in, (grad_k, grad_b)

    def params(self):
        return (self.kernels, self.bias)

    def with_params(self, params):
        return Conv2d(params[0], params[1], self.stride, self.padding)


@dataclass
class Activation:
    kind: str  # "relu" or "softplus"

    def __post_init__(self):
        if self.kind not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {self.kind!r}")

    def forward(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        return _softplus(x)

    def backward(self, x, grad_out):
        if self.kind == "relu":
            return grad_out * (x > 0), None
        return grad_out * _sigmoid(x), None

    def params(self):
        return ()

    def with_params(self, params):
        return Activation(self.kind)


@dataclass
class Flatten:
    def forward(self, x):
        return x.reshape(-1)

    def backward(self, x, grad_out):
        return grad_out.reshape(x.shape), None

    def params(self):
        return ()

    def with_params(self, params):
        return Flatten()


Layer = Dense | Conv2d | Activation | Flatten


@dataclass
class Network:
    layers: list
    class_count: int


@dataclass
class LossGradients:
    loss_value: float
    param_grads: list  # per layer: tuple of arrays, or None for parameterless layers
    input_grad: np.ndarray


def _run_forward(net: Network, x: np.ndarray):
    """Apply all layers, returning logits plus the cached input of each layer."""
    inputs = []
    cur = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(net.layers):
        inputs.append(cur)
        try:
            cur = layer.forward(cur)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({type(layer).__name__}): {exc}") from None
    if cur.ndim != 1 or cur.shape[0] != net.class_count:
        raise ShapeError(
            f"network output shape {cur.shape} does not match class count {net.class_count}"
        )
    return cur, inputs


def forward(net: Network, x: np.ndarray):
    """Evaluate the network: returns (logits, post-softmax probabilities)."""
    logits, _ = _run_forward(net, x)
    return logits, softmax(logits)


def _backprop(net: Network, inputs, grad_logits, want_params=True):
    grad = grad_logits
    param_grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        grad, pg = net.layers[i].backward(inputs[i], grad)
        if want_params:
            param_grads[i] = pg
    return grad, param_grads


def backward(net: Network, x: np.ndarray, y: int) -> LossGradients:
    """Cross-entropy loss value and its exact gradients w.r.t. parameters and input."""
    if not 0 <= y < net.class_count:
        raise ValueError(f"label {y} out of range for {net.class_count} classes")
    logits, inputs = _run_forward(net, x)
    probs = softmax(logits)
    loss = -math.log(max(probs[y], 1e-300))
    grad_logits = probs.copy()
    grad_logits[y] -= 1.0
    input_grad, param_grads = _backprop(net, inputs, grad_logits)
    return LossGradients(loss, param_grads, input_grad)


def input_saliency(net: Network, x: np.ndarray, c: int, on_logits: bool = False) -> np.ndarray:
    """Gradient of class-c post-softmax probability (or logit) w.r.t. the input."""
    if not 0 <= c < net.class_count:
        raise ValueError(f"class {c} out of range for {net.class_count} classes")
    logits, inputs = _run_forward(net, x)
    if on_logits:
        grad_logits = np.zeros(net.class_count)
        grad_logits[c] = 1.0
    else:
        probs = softmax(logits)
        grad_logits = -probs[c] * probs
        grad_logits[c] += probs[c]
    grad, _ = _backprop(net, inputs, grad_logits, want_params=False)
    return grad


def sgd_step(net: Network, grads, lr: float) -> Network:
    """One p <- p - lr*g step; returns a new Network, inputs untouched."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    if isinstance(grads, LossGradients):
        grads = grads.param_grads
    new_layers = []
    for layer, pg in zip(net.layers, grads):
        params = layer.params()
        if not params:
            new_layers.append(layer)
            continue
        new_layers.append(layer.with_params(tuple(p - lr * g for p, g in zip(params, pg))))
    return Network(new_layers, net.class_count)


def average_gradients(grad_list):
    """Mean of per-sample param_grads lists, reduced in the given (fixed) order."""
    n = len(grad_list)
    out = []
    for i in range(len(grad_list[0])):
        if grad_list[0][i] is None:
            out.append(None)
        else:
            out.append(tuple(sum(g[i][j] for g in grad_list) / n for j in range(len(grad_list[0][i]))))
    return out


# --- construction -----------------------------------------------------------

def glorot_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> Dense:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    return Dense(w, np.zeros(fan_out))


def glorot_conv(rng: np.random.Generator, in_c: int, out_c: int, k: int,
                stride: int = 1, padding: str = "valid") -> Conv2d:
    fan_in = in_c * k * k
    fan_out = out_c * k * k
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    kern = rng.uniform(-limit, limit, size=(out_c, in_c, k, k))
    return Conv2d(kern, np.zeros(out_c), stride, padding)


def make_mlp(rng: np.random.Generator, input_size: int, hidden: list[int],
             class_count: int, activation: str = "relu") -> Network:
    layers = [Flatten()]
    sizes = [input_size, *hidden, class_count]
    for i in range(len(sizes) - 1):
        layers.append(glorot_dense(rng, sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(Activation(activation))
    return Network(layers, class_count)


def make_convnet(rng: np.random.Generator, input_shape, class_count: int,
                 activation: str = "relu", channels: int = 32) -> Network:
    """Wide single-stage convnet (C->channels k5/s2 same) + linear head.

    One wide activation stage: narrow/deep relu stacks are prone to an
    absorbing all-dead state under one-step adversarial training (conv
    gradients vanish exactly once every unit is off), while killing a
    single wide layer is far harder.
    """
    c, _, _ = input_shape
    layers = [
        glorot_conv(rng, c, channels, 5, stride=2, padding="same"),
        Activation(activation),
        Flatten(),
    ]
    dummy = np.zeros(tuple(input_shape))
    for layer in layers:
        dummy = layer.forward(dummy)
    layers.append(glorot_dense(rng, dummy.shape[0], class_count))
    return Network(layers, class_count)


def reinit_layer(net: Network, index: int, rng: np.random.Generator) -> Network:
    """Fresh glorot re-initialization of one parameterized layer (sanity checks)."""
    layer = net.layers[index]
    new_layers = list(net.layers)
    if isinstance(layer, Dense):
        new_layers[index] = glorot_dense(rng, layer.weights.shape[1], layer.weights.shape[0])
    elif isinstance(layer, Conv2d):
        oc, ic, kh, _ = layer.kernels.shape
        new_layers[index] = glorot_conv(rng, ic, oc, kh, layer.stride, layer.padding)
    else:
        raise ValueError(f"layer {index} has no parameters to re-initialize")
    return Network(new_layers, net.class_count)


def parameterized_layer_indices(net: Network) -> list[int]:
    return [i for i, layer in enumerate(net.layers) if layer.params()]


def parameter_vector(net: Network) -> np.ndarray:
    parts = [p.reshape(-1) for layer in net.layers for p in layer.params()]
    return np.concatenate(parts) if parts else np.zeros(0)


# --- smoothness -------------------------------------------------------------

def _conv_operator_norm_bound(layer: Conv2d, in_shape) -> float:
    # sqrt(||A||_1 * ||A||_inf) via abs-kernel row/column sums
    abs_layer = Conv2d(np.abs(layer.kernels), np.zeros_like(layer.bias),
                       layer.stride, layer.padding)
    ones_in = np.ones(in_shape)
    row_sums = abs_layer.forward(ones_in)
    grad_in, _ = abs_layer.backward(ones_in, np.ones_like(row_sums))
    norm_inf = float(row_sums.max())
    norm_1 = float(grad_in.max())
    return math.sqrt(norm_1 * norm_inf)


def smoothness_bound(net: Network, input_shape) -> float:
    """Upper bound on the Hessian norm of the cross-entropy loss w.r.t. the input.

    Valid only for softplus activations (curvature of softplus <= 1/4,
    slope <= 1). Linear layers contribute their operator norms; the
    softmax cross-entropy head contributes Hessian norm <= 1/2 and
    gradient norm <= sqrt(2).
    """
    lip = 1.0
    curv = 0.0
    shape = tuple(input_shape)
    dummy = np.zeros(shape)
    for layer in net.layers:
        if isinstance(layer, Dense):
            op = float(np.linalg.svd(layer.weights, compute_uv=False)[0])
            lip, curv = op * lip, op * curv
        elif isinstance(layer, Conv2d):
            op = _conv_operator_norm_bound(layer, dummy.shape)
            lip, curv = op * lip, op * curv
        elif isinstance(layer, Activation):
            if layer.kind != "softplus":
                raise NonSmoothNetworkError("smoothness bound requires softplus activations")
            curv = curv + 0.25 * lip * lip
        dummy = layer.forward(dummy)
    return 0.5 * lip * lip + math.sqrt(2.0) * curv


# --- persistence ------------------------------------------------------------

def save_network(path: str | os.PathLike, net: Network) -> None:
    descriptors = []
    blobs = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            descriptors.append({"type": "dense", "out": layer.weights.shape[0],
                                "in": layer.weights.shape[1]})
            blobs.extend([layer.weights, layer.bias])
        elif isinstance(layer, Conv2d):
            descriptors.append({"type": "conv2d", "shape": list(layer.kernels.shape),
                                "stride": layer.stride, "padding": layer.padding})
            blobs.extend([layer.kernels, layer.bias])
        elif isinstance(layer, Activation):
            descriptors.append({"type": "activation", "kind": layer.kind})
        elif isinstance(layer, Flatten):
            descriptors.append({"type": "flatten"})
        else:
            raise TypeError(f"cannot serialize layer {type(layer).__name__}")
    header = json.dumps({"class_count": net.class_count, "layers": descriptors})
    with open(path, "wb") as fh:
        fh.write(NETWORK_MAGIC)
        fh.write(header.encode("ascii") + b"\n")
        for blob in blobs:
            fh.write(blob.astype("<f8").tobytes(order="C"))


def load_network(path: str | os.PathLike) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(NETWORK_MAGIC))
        if magic != NETWORK_MAGIC:
            raise TensorFormatError(f"{path}: bad network magic bytes {magic!r}")
        header_raw = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise TensorFormatError(f"{path}: truncated network header")
            if ch == b"\n":
                break
            header_raw.extend(ch)
        try:
            header = json.loads(header_raw.decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TensorFormatError(f"{path}: corrupt network header") from exc
        payload = fh.read()

    def take(shape):
        nonlocal payload
        count = int(np.prod(shape))
        if count <= 0 or count > 2**31:
            raise TensorFormatError(f"{path}: dimension overflow in parameter shape {shape}")
        need = 8 * count
        if len(payload) < need:
            raise TensorFormatError(f"{path}: truncated parameter payload")
        arr = np.frombuffer(payload[:need], dtype="<f8").reshape(shape).copy()
        payload = payload[need:]
        return arr

    layers = []
    for desc in header["layers"]:
        kind = desc["type"]
        if kind == "dense":
            w = take((desc["out"], desc["in"]))
            b = take((desc["out"],))
            layers.append(Dense(w, b))
        elif kind == "conv2d":
            k = take(tuple(desc["shape"]))
            b = take((desc["shape"][0],))
            layers.append(Conv2d(k, b, desc["stride"], desc["padding"]))
        elif kind == "activation":
            layers.append(Activation(desc["kind"]))
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise TensorFormatError(f"{path}: unknown layer type {kind!r}")
    if payload:
        raise TensorFormatError(f"{path}: {len(payload)} trailing bytes after parameters")
    return Network(layers, int(header["class_count"]))
