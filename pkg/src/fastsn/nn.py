"""A small feed-forward CNN with hand-written reverse-mode gradients.

Tensors are batched: conv layers take ``(N, C, H, W)``, linear layers take
``(N, D)`` and flatten anything wider. Conv layers are valid, stride 1,
without bias. The spectral penalty of the regularized loss is assembled in
:func:`network_penalty` and covers conv and linear weights only; biases and
activations carry no penalty.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conv import valid_conv_matrix
from .errors import ConvergenceNotReached, ShapeMismatch, ZeroPerturbation
from .numeric import power_iteration, svd
from .separation import separated_penalty_batched
from .spectral import (Method, _kernel_from_pair, fft_penalty_batched, layer_penalty,
                       layer_penalty_gradient)


class ActivationKind(enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


class Regularizer(enum.Enum):
    NONE = "none"
    POWER = "power"  # SN: power iteration on the materialized operator
    FSN = "fsn"  # rank-1 separation + Fourier norm of each factor
    FFT = "fft"  # Fourier norm of the unseparated kernel
    EXACT = "exact"  # dense SVD; reference only, slow for conv layers


@dataclass
class Conv:
    kernel: np.ndarray  # (out, in, w, h)
    input_rows: int
    input_cols: int

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def output_shape(self) -> tuple[int, int, int]:
        w, h = self.kernel.shape[2:]
        return self.out_channels, self.input_rows - w + 1, self.input_cols - h + 1


@dataclass
class Linear:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class Activation:
    kind: ActivationKind = ActivationKind.RELU


Layer = Conv | Linear | Activation


@dataclass
class Network:
    layers: list

    def __post_init__(self):
        if not any(isinstance(l, (Conv, Linear)) for l in self.layers):
            raise ValueError("a network needs at least one parameterized layer")

    @property
    def parameterized(self) -> list:
        return [l for l in self.layers if isinstance(l, (Conv, Linear))]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                out.append(layer.kernel)
            elif isinstance(layer, Linear):
                out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    @property
    def num_classes(self) -> int:
        last = self.parameterized[-1]
        return last.weight.shape[0] if isinstance(last, Linear) else last.out_channels


@dataclass
class LossConfig:
    lam: float = 0.0
    method: Regularizer = Regularizer.NONE
    power_iters: int = 20
    tol: float = 1e-6
    power_seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @property
    def active(self) -> bool:
        return self.method is not Regularizer.NONE


def build_cnn(input_size: int = 16, channels=(4, 8), num_classes: int = 3,
              kernel_size: int = 3, seed: int = 0, in_channels: int = 1) -> Network:
    """Conv-ReLU stack followed by one linear classifier, He-initialized."""
    rng = np.random.default_rng(seed)
    layers = []
    size, c_in = input_size, in_channels
    for c_out in channels:
        fan_in = c_in * kernel_size * kernel_size
        k = rng.standard_normal((c_out, c_in, kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
        layers += [Conv(k, size, size), Activation(ActivationKind.RELU)]
        size -= kernel_size - 1
        c_in = c_out
    d = c_in * size * size
    w = rng.standard_normal((num_classes, d)) * np.sqrt(1.0 / d)
    layers.append(Linear(w, np.zeros(num_classes)))
    return Network(layers)


def _act(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0.0)
    if kind is ActivationKind.SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.tanh(z)


def _act_grad(kind: ActivationKind, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.RELU:
        return (z > 0).astype(float)  # subgradient 0 at the kink
    if kind is ActivationKind.SIGMOID:
        return y * (1.0 - y)
    return 1.0 - y * y


def activation(kind: ActivationKind, z) -> np.ndarray:
    return _act(kind, np.asarray(z, dtype=float))


def _conv_forward(layer: Conv, x: np.ndarray):
    n, c, rows, cols = x.shape
    if (c, rows, cols) != (layer.in_channels, layer.input_rows, layer.input_cols):
        raise ShapeMismatch(f"conv expects {(layer.in_channels, layer.input_rows, layer.input_cols)},"
                            f" got {(c, rows, cols)}")
    w, h = layer.kernel.shape[2:]
    win = sliding_window_view(x, (w, h), axis=(2, 3))  # (N, C, Ho, Wo, w, h)
    out = np.tensordot(win, layer.kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win


def _conv_backward(layer: Conv, x: np.ndarray, win: np.ndarray, dout: np.ndarray):
    dk = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    dx = np.zeros_like(x)
    _, _, ho, wo = dout.shape
    w, h = layer.kernel.shape[2:]
    for p in range(w):
        for q in range(h):
            contrib = np.tensordot(dout, layer.kernel[:, :, p, q], axes=([1], [0]))
            dx[:, :, p:p + ho, q:q + wo] += contrib.transpose(0, 3, 1, 2)
    return dk, dx


@dataclass
class ForwardCache:
    net: Network
    inputs: list = field(default_factory=list)  # input to each layer
    extras: list = field(default_factory=list)  # conv windows / activation outputs
    logits: np.ndarray | None = None


def prepare_input(net: Network, x) -> np.ndarray:
    """Coerce a single example or a batch to the first layer's layout."""
    a = np.asarray(x, dtype=float)
    first = net.layers[0]
    if isinstance(first, Conv):
        want = (first.in_channels, first.input_rows, first.input_cols)
        if a.shape == want[1:] and want[0] == 1:
            a = a[None, None]
        elif a.shape == want:
            a = a[None]
        elif a.ndim == 3 and a.shape[1:] == want[1:] and want[0] == 1:
            a = a[:, None]
        if a.ndim != 4 or a.shape[1:] != want:
            raise ShapeMismatch(f"input shape {np.shape(x)} incompatible with conv input {want}")
    elif isinstance(first, Linear):
        d = first.weight.shape[1]
        if a.ndim == 1:
            a = a[None]
        a = a.reshape(a.shape[0], -1)
        if a.shape[1] != d:
            raise ShapeMismatch(f"input has {a.shape[1]} features, linear layer expects {d}")
    return a


def forward(net: Network, x):
    """Logits for a batch plus the cache needed by :func:`backward`."""
    h = prepare_input(net, x)
    cache = ForwardCache(net)
    for layer in net.layers:
        cache.inputs.append(h)
        if isinstance(layer, Conv):
            if h.ndim != 4:
                raise ShapeMismatch("conv layer after a flattening layer")
            h, win = _conv_forward(layer, h)
            cache.extras.append(win)
        elif isinstance(layer, Linear):
            flat = h.reshape(h.shape[0], -1)
            if flat.shape[1] != layer.weight.shape[1]:
                raise ShapeMismatch(f"linear layer expects {layer.weight.shape[1]} features,"
                                    f" got {flat.shape[1]}")
            h = flat @ layer.weight.T + layer.bias
            cache.extras.append(None)
        else:
            h = _act(layer.kind, h)
            cache.extras.append(h)
    cache.logits = h
    return h, cache


def predict(net: Network, x) -> np.ndarray:
    return np.argmax(forward(net, x)[0], axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels, dtype=int).reshape(-1)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


@dataclass
class PenaltyTerms:
    """Per-parameterized-layer penalty values and gradients of ``0.5 * penalty``."""

    penalties: list[float]
    grads: list[np.ndarray]
    residual_fro: list[float]
    unconverged: list[int]

    @property
    def total(self) -> float:
        return float(sum(self.penalties))


def _power_layer(layer, cfg: LossConfig):
    """Power-iteration penalty on the materialized operator (the SN path)."""
    misses = 0

    def run(m):
        nonlocal misses
        try:
            return power_iteration(m, cfg.power_iters, cfg.tol, cfg.power_seed)
        except ConvergenceNotReached as exc:
            misses += 1
            return exc.sigma, exc.u, exc.v

    if isinstance(layer, Linear):
        sigma, u, v = run(layer.weight)
        return sigma ** 2, sigma * np.outer(u, v), misses
    k = layer.kernel
    grad = np.zeros_like(k)
    total = 0.0
    op = ("valid", layer.input_rows, layer.input_cols)
    for o in range(k.shape[0]):
        for i in range(k.shape[1]):
            m = valid_conv_matrix(k[o, i], layer.input_rows, layer.input_cols)
            sigma, u, v = run(m)
            total += sigma ** 2
            grad[o, i] = sigma * _kernel_from_pair(u, v, k.shape[2:], op)
    return total, grad, misses


def _exact_linear(weight: np.ndarray):
    res = svd(weight)
    sigma = float(res.singular_values[0])
    return sigma ** 2, sigma * np.outer(res.left_vectors[:, 0], res.right_vectors[:, 0])


def network_penalty(net: Network, cfg: LossConfig) -> PenaltyTerms:
    """Penalty of every conv/linear layer, summed in layer order by the caller."""
    terms = PenaltyTerms([], [], [], [])
    for layer in net.parameterized:
        residual, misses = 0.0, 0
        if cfg.method is Regularizer.NONE:
            pen = 0.0
            grad = np.zeros_like(layer.kernel if isinstance(layer, Conv) else layer.weight)
        elif cfg.method is Regularizer.POWER:
            pen, grad, misses = _power_layer(layer, cfg)
        elif isinstance(layer, Linear):
            pen, grad = _exact_linear(layer.weight)
        elif cfg.method is Regularizer.FSN:
            pens, g, res = separated_penalty_batched(layer.kernel, (layer.input_rows, layer.input_cols))
            pen, grad = float(np.sum(pens)), 0.5 * g
            residual = float(np.sqrt(np.sum(res ** 2)))
        elif cfg.method is Regularizer.FFT:
            sig, grad = fft_penalty_batched(layer.kernel, (layer.input_rows, layer.input_cols))
            pen = float(np.sum(sig ** 2))
        else:
            if layer.input_rows != layer.input_cols:
                raise ValueError("exact conv penalty needs square inputs")
            pen, per_pair = layer_penalty(layer.kernel, Method.EXACT_SVD, layer.input_rows)
            grad = layer_penalty_gradient(layer.kernel, per_pair, 1.0)
        terms.penalties.append(float(pen))
        terms.grads.append(grad)
        terms.residual_fro.append(residual)
        terms.unconverged.append(misses)
    return terms


def loss(logits, labels, net: Network, cfg: LossConfig, penalty: PenaltyTerms | None = None) -> float:
    """Mean cross-entropy plus ``(lam / 2) * sum_k penalty_k``."""
    data = cross_entropy(np.asarray(logits, dtype=float), labels)
    if not cfg.active:
        return data
    if penalty is None:
        penalty = network_penalty(net, cfg)
    return data + 0.5 * cfg.lam * penalty.total


@dataclass
class Gradients:
    """Parameter gradients aligned with ``Network.parameters()`` plus the input gradient."""

    params: list[np.ndarray]
    input: np.ndarray


def backward_from(cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Backpropagate an arbitrary upstream gradient of the logits."""
    net = cache.net
    per_layer: list[list[np.ndarray]] = []
    g = dlogits
    for layer, x, extra in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.extras)):
        if isinstance(layer, Conv):
            dk, g = _conv_backward(layer, x, extra, g)
            per_layer.append([dk])
        elif isinstance(layer, Linear):
            flat = x.reshape(x.shape[0], -1)
            dw = g.T @ flat
            db = g.sum(axis=0)
            g = (g @ layer.weight).reshape(x.shape)
            per_layer.append([dw, db])
        else:
            g = g * _act_grad(layer.kind, x, extra)
    params = [p for grads in reversed(per_layer) for p in grads]
    return Gradients(params=params, input=g)


def backward(cache: ForwardCache, labels, cfg: LossConfig,
             penalty: PenaltyTerms | None = None) -> Gradients:
    """Gradient of :func:`loss` for every parameter (and the input)."""
    labels = np.asarray(labels, dtype=int).reshape(-1)
    probs = softmax(cache.logits)
    dlogits = probs
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    grads = backward_from(cache, dlogits)
    if cfg.active and cfg.lam != 0.0:
        if penalty is None:
            penalty = network_penalty(cache.net, cfg)
        it = iter(penalty.grads)
        j = 0
        for layer in cache.net.layers:
            if isinstance(layer, Conv):
                grads.params[j] = grads.params[j] + cfg.lam * next(it)
                j += 1
            elif isinstance(layer, Linear):
                grads.params[j] = grads.params[j] + cfg.lam * next(it)
                j += 2
    return grads


def sensitivity(w, xi) -> float:
    """Relative output change ``||W xi|| / ||xi||``."""
    xi = np.asarray(xi, dtype=float)
    norm = np.linalg.norm(xi)
    if norm == 0.0:
        raise ZeroPerturbation("perturbation must be nonzero")
    return float(np.linalg.norm(np.asarray(w, dtype=float) @ xi) / norm)


def lipschitz_estimate(kind: ActivationKind, samples: int = 2001, bounds=(-5.0, 5.0)) -> float:
    """Largest slope between neighbouring points of a sample grid.

    The grid always contains 0 when it lies inside ``bounds``, so kinks and
    the steepest point of the sigmoid family are sampled exactly.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    lo, hi = bounds
    xs = np.linspace(lo, hi, samples)
    if lo < 0.0 < hi:
        xs = np.union1d(xs, [0.0])
    ys = _act(kind, xs)
    return float(np.max(np.abs(np.diff(ys)) / np.diff(xs)))
