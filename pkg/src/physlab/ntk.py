"""Gradient Gram matrices of wide networks and their infinite-width limit.

For a scalar prediction ``s_i = f(x_i)`` the layer-``h`` Gram matrix is
``G^(h)_ij = <ds_i/dW^(h), ds_j/dW^(h)>``.  Because ``ds/dW^(h)`` is the outer
product of the pre-activation delta and the layer input, each entry factors as
``<delta_i, delta_j> * <x_i^(h-1), x_j^(h-1)>``.

The limit ``K^(H)`` follows the layer-wise recursion over 2x2 Gaussian
covariances: ``K^(h) = c E[s(u) s(v)]`` for hidden layers and
``K^(H) = c K^(H-1) E[s'(u) s'(v)]`` for the last one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import endtoend, neural
from .endtoend import AeSystem
from .neural import Network
from .numkit import (DomainError, Rng, ShapeError, gauss_hermite_2d, homogeneous_gauss_2d,
                     sym_eigvals)

__all__ = [
    "NtkPair",
    "QuadratureError",
    "empirical_gram",
    "limit_gram",
    "arccos_kernel",
    "spectral_distance",
    "normalize_inputs",
    "ntk_network",
    "width_sweep",
    "DriftTrace",
    "fading_drift",
    "drift_pair",
    "write_sweep_csv",
    "write_drift_csv",
]


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class NtkPair:
    g_emp: np.ndarray
    k_limit: np.ndarray
    width: int
    layer: int

    @property
    def distance(self) -> float:
        return spectral_distance(self.g_emp, self.k_limit)


# --------------------------------------------------------------------------
# empirical

def empirical_gram(net: Network, inputs, target_index: int = 0) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-layer ``G^(h)`` (bias gradients folded into their layer) and their sum."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    fp = neural.forward(net, x)
    seed = np.zeros_like(fp[-1])
    seed[:, target_index] = 1.0
    dzs, _ = neural.deltas(net, fp, seed)
    grams = []
    for h, dz in enumerate(dzs):
        dd = dz @ dz.T
        g = dd * (fp[h] @ fp[h].T)
        if net.biases is not None:
            g = g + dd
        grams.append(0.5 * (g + g.T))
    return grams, sum(grams)


# --------------------------------------------------------------------------
# analytic limit

def arccos_kernel(k_ii: float, k_ij: float, k_jj: float, degree: int) -> float:
    """``E[relu(u) relu(v)]`` (degree 1) or ``E[step(u) step(v)]`` (degree 0)."""
    norm = math.sqrt(k_ii * k_jj)
    rho = 0.0 if norm == 0 else max(-1.0, min(1.0, k_ij / norm))
    theta = math.acos(rho)
    if degree == 0:
        return (math.pi - theta) / (2.0 * math.pi)
    return norm * (math.sin(theta) + (math.pi - theta) * math.cos(theta)) / (2.0 * math.pi)


def _relu_pair(u, v):
    return np.maximum(u, 0.0) * np.maximum(v, 0.0)


def _step_pair(u, v):
    return (u > 0) * (v > 0) * 1.0


def _softplus_pair(u, v):
    return neural.softplus(u) * neural.softplus(v)


def _sigmoid_pair(u, v):
    return neural.sigmoid(u) * neural.sigmoid(v)


def _escalating(cov, f, tol: float) -> float:
    low = gauss_hermite_2d(cov, f, 32)
    high = gauss_hermite_2d(cov, f, 64)
    if abs(high - low) > tol * max(1.0, abs(high)):
        raise QuadratureError(f"quadrature did not settle: order 32 gives {low!r}, order 64 gives {high!r}")
    return high


def _expectations(tag: str, cov: np.ndarray, tol: float) -> tuple[float, float]:
    """``(E[s(u) s(v)], E[s'(u) s'(v)])`` under N(0, cov)."""
    if tag == "linear":
        return float(cov[0, 1]), 1.0
    if tag == "relu":
        return (homogeneous_gauss_2d(cov, _relu_pair, 2),
                homogeneous_gauss_2d(cov, _step_pair, 0))
    if tag == "softplus":
        return _escalating(cov, _softplus_pair, tol), _escalating(cov, _sigmoid_pair, tol)
    raise DomainError(f"limit Gram not defined for activation {tag!r}")


def normalize_inputs(inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("cannot normalise a zero input")
    return x / norms


def limit_gram(inputs, depth: int, activation: str = "relu", *, normalize: bool = True,
               tol: float = 1e-8, return_all: bool = False):
    """``K^(depth)`` for ``depth`` hidden layers of the given activation.

    With ``return_all`` the list ``[K^(0), ..., K^(depth)]`` is returned.
    """
    if depth < 1:
        raise DomainError("depth must be at least 1")
    x = normalize_inputs(inputs) if normalize else np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    c = neural.activation(activation).c_sigma
    n = x.shape[0]
    ks = [x @ x.T]
    for h in range(1, depth + 1):
        prev = ks[-1]
        k = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                cov = np.array([[prev[i, i], prev[i, j]], [prev[i, j], prev[j, j]]])
                e_val, e_der = _expectations(activation, cov, tol)
                k[i, j] = k[j, i] = c * (prev[i, j] * e_der if h == depth else e_val)
        ks.append(k)
    return ks if return_all else ks[-1]


def spectral_distance(a, b) -> float:
    """Largest absolute eigenvalue of the symmetric difference ``a - b``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    w = sym_eigvals(0.5 * (diff + diff.T), tol=1e-12)
    return float(np.max(np.abs(w)))


# --------------------------------------------------------------------------
# width sweep

def ntk_network(d_in: int, width: int, depth: int, activation: str, rng: Rng) -> Network:
    """``depth`` hidden layers of ``width`` units followed by a scalar linear head."""
    widths = (d_in,) + (width,) * depth + (1,)
    return neural.init(widths, (activation,) * depth + ("linear",), rng)


def width_sweep(inputs, depth: int, widths, seeds: int, rng: Rng, activation: str = "relu",
                k_limit: np.ndarray | None = None):
    """Spectral distance between the iteration-0 last-hidden-layer Gram and ``K^(depth)``.

    Returns ``(rows, summary)``: rows are ``(width, seed, distance)`` and the
    summary maps width to ``(mean, std)``.
    """
    widths = list(widths)
    if widths != sorted(widths):
        raise DomainError("widths must be ascending")
    x = normalize_inputs(inputs)
    k = limit_gram(x, depth, activation) if k_limit is None else k_limit
    rows, summary = [], {}
    for m in widths:
        dists = []
        for s in range(seeds):
            net = ntk_network(x.shape[1], m, depth, activation, rng.spawn("net", m, s))
            per_layer, _ = empirical_gram(net, x)
            dist = spectral_distance(per_layer[depth - 1], k)
            rows.append((m, s, dist))
            dists.append(dist)
        summary[m] = (float(np.mean(dists)), float(np.std(dists)))
    return rows, summary


# --------------------------------------------------------------------------
# weight drift under a stochastic channel

@dataclass
class DriftTrace:
    channel_kind: str
    iterations: list[int] = field(default_factory=list)
    drift: list[list[float]] = field(default_factory=list)
    n_encoder_layers: int = 0
    seed: int = 0
    diverged: bool = False
    train_trace: endtoend.TrainTrace | None = field(default=None, repr=False)

    def as_array(self) -> np.ndarray:
        return np.array(self.drift)

    def transmitter(self) -> np.ndarray:
        """Mean drift over the encoder layers, per recorded iteration."""
        return self.as_array()[:, : self.n_encoder_layers].mean(axis=1)


def _drift(now: list[np.ndarray], start: list[np.ndarray]) -> list[float]:
    return [float(np.linalg.norm(w - w0) / math.sqrt(w.shape[0])) for w, w0 in zip(now, start)]


def fading_drift(ae: AeSystem, iterations: int, eta: float, rng: Rng, *,
                 record_every: int = 1, seed: int = 0) -> DriftTrace:
    """Train ``ae`` and record ``||W(k) - W(0)||_F / sqrt(m)`` for every layer.

    ``m`` is the layer's output width.  Layer order is encoder then decoder.
    """
    start = [w.copy() for w in ae.encoder.weights + ae.decoder.weights]
    trace = DriftTrace(ae.channel.kind, n_encoder_layers=ae.encoder.depth, seed=seed)
    trace.iterations.append(0)
    trace.drift.append([0.0] * len(start))

    def record(epoch, sys):
        if epoch % record_every == 0 or epoch == iterations:
            trace.iterations.append(epoch)
            trace.drift.append(_drift(sys.encoder.weights + sys.decoder.weights, start))

    tr = endtoend.train(ae, iterations, eta, rng, record_every=record_every, seed=seed, callback=record)
    trace.diverged = tr.diverged
    trace.train_trace = tr
    return trace


def drift_pair(M: int, d: int, snr_db: float, iterations: int, eta: float, seed: int, *,
               record_every: int = 100) -> dict[str, tuple[DriftTrace, AeSystem]]:
    """Rayleigh and AWGN runs from identical initial weights and noise streams."""
    out = {}
    root = Rng(seed)
    for kind in ("rayleigh_flat", "awgn"):
        ch = endtoend.ChannelLayer(kind, endtoend.noise_var_for_snr(snr_db, M, d))
        sys = endtoend.build_system(M, d, ch, root.spawn("init"))
        tr = fading_drift(sys, iterations, eta, root.spawn("train"), record_every=record_every, seed=seed)
        out[kind] = (tr, sys)
    return out


# --------------------------------------------------------------------------
# CSV output

def write_sweep_csv(path, rows, depth: int) -> None:
    """Rows of ``(width, seed, distance)``; the compared layer is the last hidden one."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["width", "depth", "seed", "layer", "distance"])
        for m, s, dist in rows:
            w.writerow([m, depth, s, depth, f"{dist:.17g}"])


def write_drift_csv(path, traces) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "layer", "drift", "channel_kind", "seed"])
        for tr in traces:
            for it, row in zip(tr.iterations, tr.drift):
                for layer, val in enumerate(row, start=1):
                    w.writerow([it, layer, f"{val:.17g}", tr.channel_kind, tr.seed])
