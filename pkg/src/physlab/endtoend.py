"""Autoencoder link: encoder, power normalisation, channel layer, decoder.

The channel sits between the two networks as a stochastic layer.  On each
forward pass it realises an equivalent weight matrix ``W' = [H, n]`` acting
on the augmented input ``[z; 1]``: ``H`` is the identity for AWGN and a fresh
diagonal of N(0, 1) gains for Rayleigh flat fading.  During backpropagation
the realised ``W'`` is held fixed, so the decoder gradient reaches the
encoder through ``H``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .constellation import Constellation
from .neural import Network
from .numkit import DomainError, Rng, ShapeError

__all__ = [
    "ChannelLayer",
    "ChannelRealization",
    "AeSystem",
    "TrainTrace",
    "DegenerateEncoderError",
    "noise_var_for_snr",
    "snr_db_of",
    "power_normalize",
    "power_normalize_vjp",
    "channel_forward",
    "build_system",
    "encode",
    "train",
    "extract_constellation",
    "evaluate_ser",
    "nearest_neighbor_ser",
    "write_trace_csv",
]

CHANNELS = ("awgn", "rayleigh_flat")


class DegenerateEncoderError(ArithmeticError):
    pass


def noise_var_for_snr(snr_db: float, M: int, d: int) -> float:
    """Per-entry noise variance so that ``10 log10(E||z||^2 / E||n||^2) = snr_db``.

    ``E||z||^2 = 1/M`` after normalisation and ``E||n||^2 = d * sigma_n^2``.
    """
    return (1.0 / M) / (d * 10.0 ** (snr_db / 10.0))


def snr_db_of(noise_var: float, M: int, d: int) -> float:
    return 10.0 * math.log10((1.0 / M) / (d * noise_var))


@dataclass
class ChannelRealization:
    gains: np.ndarray   # (n, d) diagonal of H per transmitted vector
    noise: np.ndarray   # (n, d)

    def equivalent_weights(self, i: int = 0) -> np.ndarray:
        """``[H, n]`` for transmission ``i``: ``d x (d + 1)``."""
        return np.column_stack([np.diag(self.gains[i]), self.noise[i]])


@dataclass
class ChannelLayer:
    kind: str
    noise_var: float
    last_equivalent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in CHANNELS:
            raise DomainError(f"unknown channel {self.kind!r}; expected one of {CHANNELS}")
        if not self.noise_var > 0:
            raise DomainError("noise variance must be positive")


def channel_forward(layer: ChannelLayer, z, rng: Rng, gains=None):
    """Pass ``z`` (a vector or a batch of rows) through the channel.

    Returns ``(v, realization)``.  ``gains`` pins the fading diagonal (a test
    hook); otherwise Rayleigh gains are drawn fresh for every row.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("channel input must be finite")
    single = z.ndim == 1
    zb = z[None, :] if single else z
    noise = rng.normal(zb.shape, scale=math.sqrt(layer.noise_var))
    if gains is not None:
        h = np.broadcast_to(np.asarray(gains, dtype=np.float64), zb.shape).copy()
    elif layer.kind == "rayleigh_flat":
        h = rng.normal(zb.shape)
    else:
        h = np.ones_like(zb)
    v = h * zb + noise
    real = ChannelRealization(h, noise)
    layer.last_equivalent = real.equivalent_weights(zb.shape[0] - 1)
    return (v[0] if single else v), real


# --------------------------------------------------------------------------
# power normalisation

def power_normalize(batch, M: int) -> np.ndarray:
    """``z = x / sqrt(M * mean_i ||x_i||^2)`` so the batch mean power is ``1/M``."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.size == 0:
        raise ShapeError("empty batch")
    mean_power = float(np.mean(np.sum(x * x, axis=1)))
    if mean_power == 0.0:
        raise DegenerateEncoderError("encoder produced an all-zero batch")
    return x / math.sqrt(M * mean_power)


def power_normalize_vjp(x: np.ndarray, grad_z: np.ndarray, M: int) -> np.ndarray:
    """Gradient through :func:`power_normalize`, including the batch statistic."""
    n = x.shape[0]
    total = float(np.sum(x * x))
    c = math.sqrt(n / (M * total))
    return c * grad_z - (c / total) * x * float(np.sum(grad_z * x))


# --------------------------------------------------------------------------
# system

@dataclass
class AeSystem:
    encoder: Network
    channel: ChannelLayer
    decoder: Network
    M: int
    d: int
    p_av: float | None = None

    def __post_init__(self):
        if self.p_av is None:
            self.p_av = 1.0 / self.M
        if self.encoder.widths[0] != self.M or self.encoder.widths[-1] != self.d:
            raise ShapeError("encoder must map M -> d")
        if self.decoder.widths[0] != self.d or self.decoder.widths[-1] != self.M:
            raise ShapeError("decoder must map d -> M")

    @property
    def layer_norms(self) -> list[float]:
        return neural.frobenius_norms(self.encoder) + neural.frobenius_norms(self.decoder)

    @property
    def n_encoder_layers(self) -> int:
        return self.encoder.depth


def build_system(M: int, d: int, channel: ChannelLayer, rng: Rng, bias: bool = True) -> AeSystem:
    """Default layout: Dense+ReLU(M), Dense+linear(d) | channel | Dense+ReLU(M), Dense+softmax(M)."""
    enc = neural.init((M, M, d), ("relu", "linear"), rng.spawn("encoder"), bias=bias)
    dec = neural.init((d, M, M), ("relu", "softmax"), rng.spawn("decoder"), bias=bias)
    return AeSystem(enc, channel, dec, M, d)


def encode(sys: AeSystem, symbols=None) -> np.ndarray:
    """Normalised transmit vectors for the given symbols (default: all ``M``)."""
    onehots = np.eye(sys.M)
    x = neural.forward(sys.encoder, onehots)[-1]
    z = power_normalize(x, sys.M)
    return z if symbols is None else z[np.asarray(symbols)]


def extract_constellation(sys: AeSystem) -> Constellation:
    return Constellation(encode(sys), sys.p_av * (1.0 + 1e-12))


@dataclass
class TrainTrace:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    norms: list[list[float]] = field(default_factory=list)
    seed: int = 0
    snr_db: float = float("nan")
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def norm_array(self) -> np.ndarray:
        return np.array(self.norms)

    def record(self, epoch: int, loss: float, norms: list[float]) -> None:
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.norms.append(norms)


def _epoch(sys: AeSystem, eta: float, rng: Rng, onehots: np.ndarray, labels: np.ndarray):
    enc_fp = neural.forward(sys.encoder, onehots)
    x = enc_fp[-1]
    z = power_normalize(x, sys.M)
    v, real = channel_forward(sys.channel, z, rng)
    dec_fp = neural.forward(sys.decoder, v)
    pred = dec_fp[-1]
    n = pred.shape[0]
    loss = float(-np.mean(np.log(np.maximum(pred[np.arange(n), labels], 1e-300))))
    delta = pred.copy()
    delta[np.arange(n), labels] -= 1.0
    g_dec = neural.vjp(sys.decoder, dec_fp, delta / n, output_delta=True)
    g_z = g_dec.input * real.gains
    g_x = power_normalize_vjp(x, g_z, sys.M)
    g_enc = neural.vjp(sys.encoder, enc_fp, g_x)
    sys.encoder = neural.sgd_step(sys.encoder, g_enc, eta)
    sys.decoder = neural.sgd_step(sys.decoder, g_dec, eta)
    return loss


def train(sys: AeSystem, epochs: int, eta: float, rng: Rng, *, record_every: int = 1,
          seed: int = 0, snr_db: float | None = None, callback=None) -> TrainTrace:
    """Full-batch gradient descent over the ``M`` one-hot symbols, ``epochs`` times.

    Mutates ``sys``.  Epoch 0 in the trace is the untrained state; a
    non-finite loss stops training and marks the trace diverged.
    """
    if snr_db is None:
        snr_db = snr_db_of(sys.channel.noise_var, sys.M, sys.d)
    trace = TrainTrace(seed=seed, snr_db=snr_db)
    onehots = np.eye(sys.M)
    labels = np.arange(sys.M)
    trace.record(0, float("nan"), sys.layer_norms)
    for epoch in range(1, epochs + 1):
        try:
            loss = _epoch(sys, eta, rng, onehots, labels)
        except (OverflowError, DegenerateEncoderError, FloatingPointError):
            loss = float("nan")
        if not math.isfinite(loss) or not all(map(math.isfinite, sys.layer_norms)):
            trace.diverged_at = epoch
            trace.record(epoch, loss, sys.layer_norms)
            break
        if epoch % record_every == 0 or epoch == epochs:
            trace.record(epoch, loss, sys.layer_norms)
        if callback is not None:
            callback(epoch, sys)
    return trace


# --------------------------------------------------------------------------
# evaluation

def evaluate_ser(sys: AeSystem, n_symbols: int, rng: Rng, chunk: int = 100_000) -> float:
    """Monte-Carlo symbol error rate of the trained decoder."""
    points = encode(sys)
    errors = 0
    done = 0
    while done < n_symbols:
        n = min(chunk, n_symbols - done)
        sym = rng.integers(0, sys.M, n)
        v, _ = channel_forward(sys.channel, points[sym], rng)
        pred = neural.forward(sys.decoder, v)[-1]
        errors += int(np.sum(np.argmax(pred, axis=1) != sym))
        done += n
    return errors / n_symbols


def nearest_neighbor_ser(points, channel: ChannelLayer, n_symbols: int, rng: Rng,
                         chunk: int = 100_000, coherent: bool = True) -> float:
    """SER of minimum-distance detection on ``points``.

    For fading, ``coherent=True`` compares against ``H z`` (receiver knows the
    gains); otherwise against ``z``.
    """
    points = np.asarray(points.points if isinstance(points, Constellation) else points)
    m = points.shape[0]
    errors = 0
    done = 0
    while done < n_symbols:
        n = min(chunk, n_symbols - done)
        sym = rng.integers(0, m, n)
        v, real = channel_forward(channel, points[sym], rng)
        if coherent:
            ref = real.gains[:, None, :] * points[None, :, :]
        else:
            ref = points[None, :, :]
        dist = np.sum((v[:, None, :] - ref) ** 2, axis=-1)
        errors += int(np.sum(np.argmin(dist, axis=1) != sym))
        done += n
    return errors / n_symbols


def write_trace_csv(path, trace: TrainTrace) -> None:
    n_layers = len(trace.norms[0]) if trace.norms else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "snr_db", "seed"] + [f"fro_{h + 1}" for h in range(n_layers)])
        for e, loss, norms in zip(trace.epochs, trace.loss, trace.norms):
            w.writerow([e, f"{loss:.17g}", f"{trace.snr_db:.17g}", trace.seed] + [f"{x:.17g}" for x in norms])
