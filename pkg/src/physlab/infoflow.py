"""Matrix-based Rényi alpha-entropy and information-plane tracking.

Entropies are computed from the spectrum of a trace-normalised Gaussian
Gram matrix, in bits.  Joint entropy uses the Hadamard product of two Grams
over the same samples.  On top of these the module records per-layer mutual
information while a network trains, and keeps empirical/held-out risk.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .neural import Network
from .numkit import DomainError, Rng, ShapeError, sym_eigvals

__all__ = [
    "GramMatrix",
    "DegenerateGramError",
    "silverman_width",
    "gram",
    "normalize_kernel",
    "renyi_entropy",
    "joint_entropy",
    "mutual_information",
    "conditional_entropy",
    "InfoPlaneTrace",
    "default_snapshots",
    "record_planes",
    "train_with_planes",
    "risk_gap",
    "write_infoplane_csv",
]

DEFAULT_ALPHA = 1.01


class DegenerateGramError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GramMatrix:
    a: np.ndarray
    kernel_width: float = float("nan")

    def __post_init__(self):
        a = self.a
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ShapeError("Gram matrix must be square")
        if np.max(np.abs(a - a.T)) > 1e-10:
            raise DomainError("Gram matrix is not symmetric")
        if abs(np.trace(a) - 1.0) > 1e-10:
            raise DomainError(f"Gram matrix trace {np.trace(a)!r} is not 1")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def eigvals(self) -> np.ndarray:
        return sym_eigvals(self.a)


def silverman_width(samples: np.ndarray) -> float:
    """Rule-of-thumb width ``1.06 * s * n^(-1/5)`` for ``n x d`` samples.

    ``s`` is the root of the summed per-coordinate variances, the spread seen
    by an isotropic kernel.
    """
    x = np.asarray(samples, dtype=np.float64)
    spread = math.sqrt(float(np.sum(np.var(x, axis=0))))
    return 1.06 * spread * x.shape[0] ** -0.2


def normalize_kernel(k: np.ndarray) -> GramMatrix:
    """``A[i, j] = K[i, j] / (n sqrt(K[i, i] K[j, j]))``."""
    k = np.asarray(k, dtype=np.float64)
    n = k.shape[0]
    diag = np.sqrt(np.diag(k))
    if np.any(diag <= 0):
        raise DomainError("kernel diagonal must be positive")
    a = k / np.outer(diag, diag) / n
    np.fill_diagonal(a, 1.0 / n)
    return GramMatrix(0.5 * (a + a.T))


def gram(samples, kernel_width: float | str = "auto") -> GramMatrix:
    """Normalised Gaussian-kernel Gram matrix of the rows of ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ShapeError("need at least two samples")
    if isinstance(kernel_width, str):
        if kernel_width != "auto":
            raise DomainError(f"unknown kernel width rule {kernel_width!r}")
        width = silverman_width(x)
        if width == 0.0:
            # every sample identical: any width gives the all-ones kernel
            width = 1.0
    else:
        width = float(kernel_width)
    if not width > 0:
        raise DomainError("kernel width must be positive")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    k = np.exp(-d2 / (2.0 * width * width))
    a = k / x.shape[0]
    np.fill_diagonal(a, 1.0 / x.shape[0])
    return GramMatrix(0.5 * (a + a.T), width)


def _entropy_of(a: np.ndarray, alpha: float) -> float:
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if alpha == 1.0:
        raise DomainError("alpha = 1 is the Shannon limit; use a value near 1 such as 1.01")
    lam = np.clip(sym_eigvals(a), 0.0, None)
    return float(math.log2(float(np.sum(lam ** alpha))) / (1.0 - alpha))


def renyi_entropy(g: GramMatrix, alpha: float = DEFAULT_ALPHA) -> float:
    """``S_alpha(A) = log2(sum_i lambda_i^alpha) / (1 - alpha)``."""
    return _entropy_of(g.a, alpha)


def joint_entropy(ga: GramMatrix, gb: GramMatrix, alpha: float = DEFAULT_ALPHA) -> float:
    if ga.n != gb.n:
        raise ShapeError("Gram matrices must cover the same samples")
    h = ga.a * gb.a
    tr = float(np.trace(h))
    if tr <= 0:
        raise DegenerateGramError("Hadamard product has zero trace")
    return _entropy_of(h / tr, alpha)


def mutual_information(ga: GramMatrix, gb: GramMatrix, alpha: float = DEFAULT_ALPHA) -> float:
    """``S(A) + S(B) - S(A, B)``; raw (may dip slightly below zero)."""
    return renyi_entropy(ga, alpha) + renyi_entropy(gb, alpha) - joint_entropy(ga, gb, alpha)


def conditional_entropy(gz: GramMatrix, gv: GramMatrix, alpha: float = DEFAULT_ALPHA) -> float:
    """``S(z | v) = S(z, v) - S(v)``."""
    return joint_entropy(gz, gv, alpha) - renyi_entropy(gv, alpha)


# --------------------------------------------------------------------------
# information planes

@dataclass
class InfoPlaneTrace:
    """Rows of ``(iteration, layer, i_tv, i_tvp, i_ttp, mse)``.

    ``layer`` counts hidden layers from 1; layer ``j`` is paired with its
    mirror ``2S - j`` in a network with ``2S - 1`` hidden layers.
    """

    n_hidden: int
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    rows: list[tuple] = field(default_factory=list)
    kernel_widths: list[float] = field(default_factory=list)

    def mirror(self, layer: int) -> int:
        return self.n_hidden + 1 - layer

    @property
    def iterations(self) -> list[int]:
        return sorted({r[0] for r in self.rows})

    def at(self, iteration: int) -> dict[int, tuple]:
        return {r[1]: r for r in self.rows if r[0] == iteration}

    def mse(self) -> list[tuple[int, float]]:
        seen = {}
        for r in self.rows:
            seen[r[0]] = r[5]
        return sorted(seen.items())

    def planes(self, iteration: int) -> dict[str, list[tuple[float, float]]]:
        """IP-I ``(I(T;V), I(T;V'))``, IP-II ``(I(T;V), I(T';V'))``, IP-III ``(I(T;V), I(T';V))``."""
        recs = self.at(iteration)
        out = {"IP-I": [], "IP-II": [], "IP-III": []}
        for layer in sorted(recs):
            r, m = recs[layer], recs[self.mirror(layer)]
            out["IP-I"].append((r[2], r[3]))
            out["IP-II"].append((r[2], m[3]))
            out["IP-III"].append((r[2], m[2]))
        return out


def default_snapshots(max_iteration: int) -> list[int]:
    """0, 1, 2, 5, 10, 20, 50, ... up to ``max_iteration`` (always included)."""
    out, base = [0], 1
    while base <= max_iteration:
        for step in (1, 2, 5):
            if step * base <= max_iteration:
                out.append(step * base)
        base *= 10
    if out[-1] != max_iteration:
        out.append(max_iteration)
    return sorted(set(out))


def _representations(net: Network, v: np.ndarray) -> list[np.ndarray]:
    return list(neural.forward(net, v))


def record_planes(trace: InfoPlaneTrace, iteration: int, net: Network, v: np.ndarray, z: np.ndarray,
                  kernel_width: float | str = "auto") -> None:
    """Append one snapshot: per hidden layer ``I(T;V)``, ``I(T;V')`` and ``I(T;T')``.

    ``v`` and ``z`` are real evaluation inputs and targets; the MSE column is
    the summed squared error per sample.
    """
    if net.depth - 1 != trace.n_hidden:
        raise ShapeError(f"network has {net.depth - 1} hidden layers, trace expects {trace.n_hidden}")
    reps = _representations(net, v)
    grams = [gram(r, kernel_width) for r in reps]
    g_in, g_out = grams[0], grams[-1]
    mse = float(np.mean(np.sum((reps[-1] - z) ** 2, axis=1)))
    for layer in range(1, trace.n_hidden + 1):
        g_t, g_tp = grams[layer], grams[trace.mirror(layer)]
        trace.rows.append((
            iteration,
            layer,
            mutual_information(g_t, g_in, trace.alpha),
            mutual_information(g_t, g_out, trace.alpha),
            mutual_information(g_t, g_tp, trace.alpha),
            mse,
        ))
        trace.kernel_widths.append(g_t.kernel_width)


def train_with_planes(train_x, train_y, eval_x, eval_y, widths, iterations: int, eta: float, batch: int,
                      rng: Rng, *, activation: str = "linear", snapshots=None, alpha: float = DEFAULT_ALPHA,
                      kernel_width: float | str = "auto", seed: int = 0,
                      lr_convention: str = "standard") -> tuple[Network, InfoPlaneTrace]:
    """Mini-batch SGD on the square loss; one iteration is one mini-batch step.

    Batches are drawn by walking a fresh permutation of the training set and
    reshuffling when it runs out.
    """
    widths = tuple(widths)
    net = neural.init(widths, activation, rng.spawn("init"))
    rates = neural.layer_rates(net, eta, lr_convention)
    trace = InfoPlaneTrace(len(widths) - 2, alpha, seed)
    snaps = set(default_snapshots(iterations) if snapshots is None else snapshots)
    order_rng = rng.spawn("order")
    n = train_x.shape[0]
    perm, pos = order_rng.permutation(n), 0
    if 0 in snaps:
        record_planes(trace, 0, net, eval_x, eval_y, kernel_width)
    for it in range(1, iterations + 1):
        if pos + batch > n:
            perm, pos = order_rng.permutation(n), 0
        idx = perm[pos:pos + batch]
        pos += batch
        fp = neural.forward(net, train_x[idx])
        net = neural.sgd_step(net, neural.backward(net, fp, "square", train_y[idx]), rates)
        if it in snaps:
            record_planes(trace, it, net, eval_x, eval_y, kernel_width)
    return net, trace


def _xy(data):
    if hasattr(data, "v") and hasattr(data, "z"):
        from .chanest import to_real
        return to_real(data.v), to_real(data.z)
    return data


def risk_gap(net: Network, train_set, test_set, loss: str = "square") -> tuple[float, float, float]:
    """``(empirical risk, held-out risk, gap)`` with ``gap = held-out - empirical``."""
    xs, ys = _xy(train_set)
    xt, yt = _xy(test_set)
    emp = neural.loss_value(neural.forward(net, xs)[-1], ys, loss)
    pop = neural.loss_value(neural.forward(net, xt)[-1], yt, loss)
    return emp, pop, pop - emp


INFOPLANE_HEADER = ["iteration", "layer", "i_tv", "i_tvp", "i_ttp", "mse", "alpha", "kernel_width", "seed"]


def write_infoplane_csv(path, trace: InfoPlaneTrace) -> None:
    """Mutual information is clipped at zero on the way out."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INFOPLANE_HEADER)
        for row, width in zip(trace.rows, trace.kernel_widths):
            it, layer, i_tv, i_tvp, i_ttp, mse = row
            w.writerow([it, layer] + [f"{max(x, 0.0):.17g}" for x in (i_tv, i_tvp, i_ttp)]
                       + [f"{mse:.17g}", f"{trace.alpha:.17g}", f"{width:.17g}", trace.seed])
