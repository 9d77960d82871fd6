"""OFDM channel estimation bench.

A Rayleigh multipath channel with a known power-delay profile gives a
closed-form frequency-domain covariance ``R_hh = F diag(pdp) F^H``.  On top of
it sit the LS and LMMSE estimators (with their analytic MSEs), a Gaussian
mutual-information formula, pilot-interpolated training sets, and linear
neural estimators trained by mini-batch gradient descent.

Noise variances are per complex subcarrier; MSE is ``E||h - h_hat||^2``
summed over subcarriers.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .neural import Network
from .numkit import DomainError, Rng, SingularityError, herm_solve, logdet_hpd

__all__ = [
    "OfdmChannelModel",
    "EstimationDataset",
    "EstimatorReport",
    "exponential_model",
    "sample_channel",
    "ls_estimate",
    "lmmse_estimate",
    "ls_mse",
    "lmmse_mse",
    "analytic_gaussian_mi",
    "noise_var_for_snr",
    "build_dataset",
    "to_real",
    "from_real",
    "train_nn_estimator",
    "estimator_mse",
    "depth_sweep",
    "write_sweep_csv",
    "write_dataset_csv",
]


@dataclass(frozen=True)
class OfdmChannelModel:
    n_c: int
    pdp: np.ndarray

    def __post_init__(self):
        pdp = np.asarray(self.pdp, dtype=np.float64)
        if pdp.ndim != 1 or pdp.size < 1 or pdp.size > self.n_c:
            raise DomainError(f"need between 1 and {self.n_c} taps")
        if np.any(pdp < 0):
            raise DomainError("power-delay profile entries must be non-negative")
        object.__setattr__(self, "pdp", pdp)

    @property
    def taps(self) -> int:
        return self.pdp.size

    @property
    def dft(self) -> np.ndarray:
        k = np.arange(self.n_c)[:, None]
        l = np.arange(self.taps)[None, :]
        return np.exp(-2j * np.pi * k * l / self.n_c)

    @property
    def r_hh(self) -> np.ndarray:
        f = self.dft
        r = (f * self.pdp) @ f.conj().T
        return 0.5 * (r + r.conj().T)


def exponential_model(n_c: int = 64, taps: int | None = None) -> OfdmChannelModel:
    """``taps`` defaults to ``n_c / 16``; power decays by ``e`` per tap, total power 1."""
    taps = max(1, n_c // 16) if taps is None else taps
    pdp = np.exp(-np.arange(taps, dtype=np.float64))
    return OfdmChannelModel(n_c, pdp / pdp.sum())


def noise_var_for_snr(snr_db: float) -> float:
    # average per-subcarrier channel power is sum(pdp) = 1
    return 10.0 ** (-snr_db / 10.0)


def sample_channel(model: OfdmChannelModel, rng: Rng, n: int | None = None) -> np.ndarray:
    """One CFR (shape ``(n_c,)``) or ``n`` of them as rows."""
    shape = (1 if n is None else n, model.taps)
    g = rng.complex_normal(shape) * np.sqrt(model.pdp)
    h = g @ model.dft.T
    return h[0] if n is None else h


def ls_estimate(model: OfdmChannelModel, h, noise_var: float, rng: Rng) -> np.ndarray:
    if not noise_var > 0:
        raise DomainError("noise variance must be positive")
    h = np.asarray(h)
    return h + rng.complex_normal(h.shape, var=noise_var)


def lmmse_estimate(model: OfdmChannelModel, v, noise_var: float, r_hh: np.ndarray | None = None) -> np.ndarray:
    """``R_hh (R_hh + noise_var I)^{-1} v`` for a vector or a batch of rows."""
    if not noise_var > 0:
        raise DomainError("noise variance must be positive")
    r = model.r_hh if r_hh is None else r_hh
    v = np.asarray(v, dtype=np.complex128)
    rhs = v.T if v.ndim == 2 else v
    a = r + noise_var * np.eye(model.n_c)
    x = herm_solve(a, rhs)
    resid = np.linalg.norm(a @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if resid > 1e-8:
        raise SingularityError(-1, resid, f"LMMSE solve residual {resid:.3g} exceeds 1e-8")
    out = r @ x
    return out.T if v.ndim == 2 else out


def ls_mse(model: OfdmChannelModel, noise_var: float) -> float:
    return model.n_c * noise_var


def lmmse_mse(model: OfdmChannelModel, noise_var: float) -> float:
    """``tr[R (I + R / noise_var)^{-1}]``."""
    r = model.r_hh
    x = herm_solve(np.eye(model.n_c) + r / noise_var, r)
    return float(np.real(np.trace(x)))


def analytic_gaussian_mi(model: OfdmChannelModel, noise_var: float, ridge: float = 1e-12) -> float:
    """``log |R_hh| - log |R_ee|`` in nats for ``v = h + n``.

    ``R_ee = R_hh - R_hv R_vv^{-1} R_vh`` is formed as
    ``noise_var * R_hh (R_hh + noise_var I)^{-1}`` (the same matrix, without the
    cancellation).  A ridge is added to both determinants so rank-deficient
    covariances (fewer taps than subcarriers) stay finite.
    """
    if not noise_var > 0:
        raise DomainError("noise variance must be positive")
    r = model.r_hh
    eye = np.eye(model.n_c)
    r_ee = noise_var * herm_solve(r + noise_var * eye, r)
    r_ee = 0.5 * (r_ee + r_ee.conj().T)
    try:
        return logdet_hpd(r + ridge * eye) - logdet_hpd(r_ee + ridge * eye)
    except SingularityError as exc:
        raise SingularityError(exc.pivot, exc.value, "error covariance is not positive definite") from exc


# --------------------------------------------------------------------------
# datasets

@dataclass
class EstimationDataset:
    v: np.ndarray        # (n, n_c) complex observations
    z: np.ndarray        # (n, n_c) complex true CFRs
    snr_db: float
    pilot_spacing: int

    def __post_init__(self):
        if self.v.shape != self.z.shape or self.v.ndim != 2 or self.v.shape[0] < 1:
            raise DomainError("observations and targets must be matching non-empty (n, n_c) arrays")

    def __len__(self) -> int:
        return self.v.shape[0]

    @property
    def n_c(self) -> int:
        return self.v.shape[1]


def _interpolate(values: np.ndarray, pilots: np.ndarray, n_c: int) -> np.ndarray:
    grid = np.arange(n_c)
    out = np.empty((values.shape[0], n_c), dtype=np.complex128)
    for i, row in enumerate(values):
        out[i] = np.interp(grid, pilots, row.real) + 1j * np.interp(grid, pilots, row.imag)
    return out


def build_dataset(model: OfdmChannelModel, n: int, snr_db: float, pilot_spacing: int, rng: Rng) -> EstimationDataset:
    """LS estimates at every ``pilot_spacing``-th subcarrier, linearly interpolated.

    Real and imaginary parts are interpolated separately; subcarriers past the
    last pilot hold its value.
    """
    if n < 1:
        raise DomainError("need at least one sample")
    if pilot_spacing < 1 or model.n_c % pilot_spacing:
        raise DomainError(f"pilot spacing {pilot_spacing} must divide {model.n_c}")
    noise_var = noise_var_for_snr(snr_db)
    h = sample_channel(model, rng.spawn("channel"), n)
    pilots = np.arange(0, model.n_c, pilot_spacing)
    v_p = ls_estimate(model, h[:, pilots], noise_var, rng.spawn("noise"))
    v = v_p if pilot_spacing == 1 else _interpolate(v_p, pilots, model.n_c)
    return EstimationDataset(v, h, snr_db, pilot_spacing)


def to_real(c: np.ndarray) -> np.ndarray:
    return np.concatenate([c.real, c.imag], axis=-1)


def from_real(r: np.ndarray) -> np.ndarray:
    half = r.shape[-1] // 2
    return r[..., :half] + 1j * r[..., half:]


# --------------------------------------------------------------------------
# neural estimators

@dataclass
class EstimatorTrace:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def train_nn_estimator(dataset: EstimationDataset, hidden_layers: int, width: int, epochs: int,
                       eta: float, batch: int, rng: Rng, activation: str = "linear",
                       net: Network | None = None, lr_convention: str = "standard"
                       ) -> tuple[Network, EstimatorTrace]:
    """Square-loss mini-batch SGD on ``[Re v, Im v] -> [Re z, Im z]``.

    Each epoch shuffles the training set and walks it in batches of ``batch``.
    ``eta`` is read under ``lr_convention`` (see :func:`neural.layer_rates`).
    """
    x, y = to_real(dataset.v), to_real(dataset.z)
    dim = x.shape[1]
    if net is None:
        widths = (dim,) + (width,) * hidden_layers + (dim,)
        net = neural.init(widths, activation, rng.spawn("init"))
    rates = neural.layer_rates(net, eta, lr_convention)
    order_rng = rng.spawn("order")
    trace = EstimatorTrace()
    n = x.shape[0]
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(n)
        total = 0.0
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, n, batch):
                    idx = perm[start:start + batch]
                    fp = neural.forward(net, x[idx])
                    total += 0.5 * float(np.sum((fp[-1] - y[idx]) ** 2))
                    net = neural.sgd_step(net, neural.backward(net, fp, "square", y[idx]), rates)
        except OverflowError:
            total = float("nan")
        loss = total / n
        trace.epochs.append(epoch)
        trace.loss.append(loss)
        if not math.isfinite(loss):
            trace.diverged_at = epoch
            break
    return net, trace


def estimator_mse(net: Network, dataset: EstimationDataset) -> float:
    pred = neural.forward(net, to_real(dataset.v))[-1]
    return float(np.mean(np.sum((pred - to_real(dataset.z)) ** 2, axis=1)))


@dataclass(frozen=True)
class EstimatorReport:
    estimator: str
    mse: float
    n_test: int
    snr_db: float
    n_train: int = 0
    depth: int = 0
    width: int = 0
    seed: int = 0


def depth_sweep(model: OfdmChannelModel, n_train: int, depths, trials: int, rng: Rng, *,
                snr_db: float = 10.0, width: int = 128, epochs: int = 2000, eta: float = 1e-3,
                batch: int = 100, n_test: int = 2000, pilot_spacing: int = 1):
    """Mean test MSE per depth, plus the per-trial matrix ``(trials, len(depths))``.

    Trial ``t`` uses one train/test split for every depth, so columns are paired.
    """
    depths = list(depths)
    if depths != sorted(depths):
        raise DomainError("depths must be ascending")
    per_trial = np.zeros((trials, len(depths)))
    for t in range(trials):
        trng = rng.spawn("trial", t)
        train = build_dataset(model, n_train, snr_db, pilot_spacing, trng.spawn("train"))
        test = build_dataset(model, n_test, snr_db, pilot_spacing, trng.spawn("test"))
        for j, depth in enumerate(depths):
            net, tr = train_nn_estimator(train, depth, width, epochs, eta, batch, trng.spawn("net", depth))
            per_trial[t, j] = float("inf") if tr.diverged else estimator_mse(net, test)
    return dict(zip(depths, per_trial.mean(axis=0))), per_trial


# --------------------------------------------------------------------------
# CSV output

SWEEP_HEADER = ["estimator", "snr_db", "n_train", "depth", "width", "mse", "n_test", "seed"]


def write_sweep_csv(path, reports) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in reports:
            w.writerow([r.estimator, f"{r.snr_db:.17g}", r.n_train, r.depth, r.width,
                        f"{r.mse:.17g}", r.n_test, r.seed])


def write_dataset_csv(path, dataset: EstimationDataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "subcarrier", "v_re", "v_im", "z_re", "z_im"])
        for i in range(len(dataset)):
            for k in range(dataset.n_c):
                v, z = dataset.v[i, k], dataset.z[i, k]
                w.writerow([i, k, f"{v.real:.17g}", f"{v.imag:.17g}", f"{z.real:.17g}", f"{z.imag:.17g}"])
