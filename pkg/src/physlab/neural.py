"""Feedforward networks written out by hand: forward pass, backpropagation, SGD.

Layer ``h`` computes ``x_h = sqrt(c_sigma / m_h) * sigma(W_h x_{h-1} + b_h)``
with ``m_h`` the layer's output width and ``c_sigma = 1 / E[sigma(g)^2]``
for standard normal ``g``.  Softmax layers are left unscaled.  Weights are
drawn i.i.d. N(0, 1); the scaling lives in the forward pass, not in the
weights.  Biases are optional and start at zero.

Batches are row-major: an input batch has shape ``(n, widths[0])``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .numkit import DomainError, Rng, ShapeError

__all__ = [
    "Activation",
    "activation",
    "Network",
    "ForwardPass",
    "Gradients",
    "init",
    "forward",
    "vjp",
    "deltas",
    "backward",
    "loss_value",
    "sgd_step",
    "layer_rates",
    "frobenius_norms",
    "save_network",
    "load_network",
    "network_to_json",
    "network_from_json",
]

TAGS = ("softplus", "relu", "linear", "softmax")
LOSSES = ("cross_entropy", "square")


def softplus(z):
    # overflow-safe log(1 + e^z)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def softmax(z):
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


@lru_cache(maxsize=None)
def _c_sigma(tag: str) -> float:
    if tag == "relu":
        return 2.0
    if tag in ("linear", "softmax"):
        return 1.0
    x, w = hermegauss(80)
    w = w / math.sqrt(2.0 * math.pi)
    return float(1.0 / np.sum(w * softplus(x) ** 2))


@dataclass(frozen=True)
class Activation:
    tag: str
    c_sigma: float

    def __call__(self, z):
        if self.tag == "softplus":
            return softplus(z)
        if self.tag == "relu":
            return np.maximum(z, 0.0)
        if self.tag == "linear":
            return z
        return softmax(z)

    def derivative(self, z):
        """Elementwise derivative; undefined for softmax."""
        if self.tag == "softplus":
            return sigmoid(z)
        if self.tag == "relu":
            return (z > 0).astype(np.float64)
        if self.tag == "linear":
            return np.ones_like(z)
        raise DomainError("softmax has no elementwise derivative")


def activation(tag: str) -> Activation:
    if tag not in TAGS:
        raise DomainError(f"unknown activation {tag!r}; expected one of {TAGS}")
    return Activation(tag, _c_sigma(tag))


@dataclass
class Network:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    activations: tuple[Activation, ...]
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.activations = tuple(a if isinstance(a, Activation) else activation(a) for a in self.activations)
        if len(self.weights) != len(self.widths) - 1 or len(self.activations) != len(self.weights):
            raise ShapeError("need one weight matrix and one activation per layer")
        for h, w in enumerate(self.weights):
            if w.shape != (self.widths[h + 1], self.widths[h]):
                raise ShapeError(f"layer {h + 1} weight has shape {w.shape}, "
                                 f"expected {(self.widths[h + 1], self.widths[h])}")
        if self.biases is not None:
            for h, b in enumerate(self.biases):
                if b.shape != (self.widths[h + 1],):
                    raise ShapeError(f"layer {h + 1} bias has shape {b.shape}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def scales(self) -> tuple[float, ...]:
        return tuple(
            1.0 if act.tag == "softmax" else math.sqrt(act.c_sigma / m)
            for act, m in zip(self.activations, self.widths[1:])
        )

    def copy(self) -> "Network":
        return Network(
            self.widths,
            [w.copy() for w in self.weights],
            self.activations,
            None if self.biases is None else [b.copy() for b in self.biases],
        )

    def n_params(self) -> int:
        n = sum(w.size for w in self.weights)
        return n + (0 if self.biases is None else sum(b.size for b in self.biases))


def init(widths, activations, rng: Rng, bias: bool = False) -> Network:
    """Draw every weight entry from N(0, 1); biases (if any) start at zero."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or min(widths) < 1:
        raise ShapeError(f"invalid widths {widths}")
    if isinstance(activations, str):
        activations = [activations] * (len(widths) - 1)
    weights = [rng.normal((widths[h + 1], widths[h])) for h in range(len(widths) - 1)]
    biases = [np.zeros(m) for m in widths[1:]] if bias else None
    return Network(widths, weights, tuple(activations), biases)


class ForwardPass(list):
    """Layer outputs ``[x_0, x_1, ..., x_H]``; ``pre`` holds the pre-activations."""

    pre: list


def forward(net: Network, x) -> ForwardPass:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != net.widths[0]:
        raise ShapeError(f"input width {x.shape[-1]} != network input width {net.widths[0]}")
    out = ForwardPass([x])
    out.pre = []
    for h, (w, act, scale) in enumerate(zip(net.weights, net.activations, net.scales)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = out[-1] @ w.T
            if net.biases is not None:
                z = z + net.biases[h]
            a = scale * act(z)
        if not np.all(np.isfinite(a)):
            raise OverflowError(f"non-finite activation in layer {h + 1}")
        out.pre.append(z)
        out.append(a)
    if single:
        squeezed = ForwardPass(a[0] for a in out)
        squeezed.pre = [z[0] for z in out.pre]
        return squeezed
    return out


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None
    input: np.ndarray | None = field(default=None, repr=False)


def _as_batch(fp: ForwardPass):
    if fp[0].ndim == 1:
        batch = ForwardPass(a[None, :] for a in fp)
        batch.pre = [z[None, :] for z in fp.pre]
        return batch
    return fp


def deltas(net: Network, fp: ForwardPass, grad_out, *, output_delta: bool = False):
    """Per-sample ``dL/d(pre-activation)`` for every layer, plus ``dL/d(input)``.

    Returns ``(dz, g_in)`` where ``dz[h]`` has shape ``(n, widths[h + 1])``.
    """
    fp = _as_batch(fp)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if len(fp) != net.depth + 1:
        raise ShapeError("forward pass does not match network depth")
    dzs: list[np.ndarray] = [None] * net.depth
    for h in range(net.depth - 1, -1, -1):
        act, scale, z = net.activations[h], net.scales[h], fp.pre[h]
        if g.shape != z.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match layer {h + 1} output {z.shape}")
        if h == net.depth - 1 and output_delta:
            dz = g
        elif act.tag == "softmax":
            s = fp[h + 1]
            dz = s * (g - np.sum(g * s, axis=-1, keepdims=True))
        else:
            dz = scale * g * act.derivative(z)
        dzs[h] = dz
        g = dz @ net.weights[h]
    return dzs, g


def vjp(net: Network, fp: ForwardPass, grad_out, *, output_delta: bool = False) -> Gradients:
    """Pull ``grad_out = dL/d(output)`` back through the network.

    With ``output_delta=True`` the argument is taken as ``dL/d(pre-activation)``
    of the last layer instead, which is how the softmax/cross-entropy pair is
    handled.
    """
    fp = _as_batch(fp)
    dzs, g_in = deltas(net, fp, grad_out, output_delta=output_delta)
    gw = [dz.T @ x for dz, x in zip(dzs, fp)]
    gb = None if net.biases is None else [dz.sum(axis=0) for dz in dzs]
    return Gradients(gw, gb, g_in)


def _targets(target, n: int, width: int) -> np.ndarray:
    t = np.asarray(target)
    if t.ndim <= 1 and np.issubdtype(t.dtype, np.integer):
        onehot = np.zeros((n, width))
        onehot[np.arange(n), np.atleast_1d(t)] = 1.0
        return onehot
    t = np.asarray(target, dtype=np.float64)
    return t[None, :] if t.ndim == 1 else t


def loss_value(pred, target, loss: str) -> float:
    """Batch-mean loss: cross-entropy ``-mean log p[target]`` or square ``mean 0.5||p - y||^2``."""
    pred = np.atleast_2d(pred)
    y = _targets(target, pred.shape[0], pred.shape[1])
    if loss == "cross_entropy":
        if np.any(pred < 0) or np.any(np.abs(pred.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("cross-entropy needs probability-vector predictions")
        with np.errstate(divide="ignore"):
            return float(-np.mean(np.sum(y * np.log(pred), axis=1)))
    if loss == "square":
        return float(0.5 * np.mean(np.sum((pred - y) ** 2, axis=1)))
    raise DomainError(f"unknown loss {loss!r}")


def backward(net: Network, fp: ForwardPass, loss: str, target) -> Gradients:
    """Gradients of the batch-mean loss w.r.t. every weight (and bias)."""
    fp = _as_batch(fp)
    pred = fp[-1]
    n = pred.shape[0]
    y = _targets(target, n, pred.shape[1])
    if y.shape != pred.shape:
        raise ShapeError(f"target shape {y.shape} does not match prediction {pred.shape}")
    if loss == "cross_entropy":
        if net.activations[-1].tag == "softmax":
            return vjp(net, fp, (pred - y) / n, output_delta=True)
        return vjp(net, fp, -(y / pred) / n)
    if loss == "square":
        return vjp(net, fp, (pred - y) / n)
    raise DomainError(f"unknown loss {loss!r}")


def layer_rates(net: Network, eta: float, convention: str = "raw") -> list[float]:
    """Per-layer step sizes.

    ``raw`` applies ``eta`` to the N(0, 1) weights directly.  ``standard``
    gives the step that reproduces plain SGD with rate ``eta`` on the
    conventional parameterisation, where each weight carries the layer scale
    (``V = s W``): the raw step is then ``eta / s^2``.
    """
    if convention == "raw":
        return [eta] * net.depth
    if convention == "standard":
        return [eta / (s * s) for s in net.scales]
    raise DomainError(f"unknown learning-rate convention {convention!r}")


def sgd_step(net: Network, grads: Gradients, eta) -> Network:
    """``W <- W - eta dL/dW``; ``eta`` may be a per-layer sequence."""
    rates = [eta] * net.depth if np.isscalar(eta) else list(eta)
    weights = [w - r * g for w, g, r in zip(net.weights, grads.weights, rates)]
    biases = None
    if net.biases is not None:
        biases = [b - r * g for b, g, r in zip(net.biases, grads.biases, rates)]
    return Network(net.widths, weights, net.activations, biases)


def frobenius_norms(net: Network) -> list[float]:
    return [float(np.linalg.norm(w)) for w in net.weights]


# --------------------------------------------------------------------------
# JSON snapshots

def _nested(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ",".join(f"{x:.17g}" for x in a) + "]"
    return "[" + ",".join(_nested(row) for row in a) + "]"


def network_to_json(net: Network) -> str:
    parts = [
        '"widths":' + json.dumps(list(net.widths)),
        '"activations":' + json.dumps([a.tag for a in net.activations]),
        '"weights":[' + ",".join(_nested(w) for w in net.weights) + "]",
    ]
    if net.biases is not None:
        parts.append('"biases":[' + ",".join(_nested(b) for b in net.biases) + "]")
    return "{" + ",".join(parts) + "}\n"


def network_from_json(text: str) -> Network:
    obj = json.loads(text)
    widths = obj["widths"]
    weights = [np.array(w, dtype=np.float64).reshape(widths[h + 1], widths[h]) for h, w in enumerate(obj["weights"])]
    biases = None
    if "biases" in obj:
        biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
    return Network(tuple(widths), weights, tuple(obj["activations"]), biases)


def save_network(path, net: Network) -> None:
    Path(path).write_text(network_to_json(net), encoding="utf-8")


def load_network(path) -> Network:
    return network_from_json(Path(path).read_text(encoding="utf-8"))
