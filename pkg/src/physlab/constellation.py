"""Constrained gradient search for low error-probability signal constellations.

A constellation is an ``M x d`` real matrix whose rows are the signal points,
together with an average-power budget ``p_av``.  The search descends the
high-SNR pairwise error surrogate and then rescales the whole point set so
the average power sits exactly on the budget.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import DomainError, Rng, ShapeError

__all__ = [
    "Constellation",
    "GsConfig",
    "DegenerateGeometryError",
    "DegenerateGeometryWarning",
    "pairwise_sq_distances",
    "min_distance",
    "asymptotic_pe",
    "pe_surrogate",
    "pe_gradient",
    "gs_step",
    "optimize",
    "triangle_angles",
    "write_constellation_csv",
    "read_constellation_csv",
]

_POWER_SLACK = 1e-9


class DegenerateGeometryError(ArithmeticError):
    pass


class DegenerateGeometryWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray
    p_av: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ShapeError(f"points must be M x d, got shape {pts.shape}")
        m, d = pts.shape
        if m < 2 or d < 1:
            raise ShapeError(f"need M >= 2 and d >= 1, got M={m}, d={d}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("constellation points must be finite")
        if not self.p_av > 0:
            raise DomainError("power budget must be positive")
        power = float(np.mean(np.sum(pts * pts, axis=1)))
        if power > self.p_av * (1.0 + _POWER_SLACK):
            raise DomainError(f"average power {power:.6g} exceeds budget {self.p_av:.6g}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "p_av", float(self.p_av))

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def power(self) -> float:
        return float(np.mean(np.sum(self.points ** 2, axis=1)))

    @classmethod
    def normalized(cls, points, p_av: float) -> "Constellation":
        """Scale ``points`` so their average power equals ``p_av``."""
        pts = np.array(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(_rescale(pts, p_av), p_av)


@dataclass
class GsConfig:
    """Settings for the gradient search.

    ``n0`` is the noise parameter of the error surrogate (the AWGN one-sided
    density is ``2*n0``).  ``p_av`` defaults to ``1/M``.
    """

    n0: float = 0.05
    step: float = 2e-4
    max_steps: int = 1000
    restarts: int = 1
    seed: int = 0
    p_av: float | None = None

    def __post_init__(self):
        if not self.n0 > 0:
            raise DomainError("n0 must be positive")
        if not self.step > 0:
            raise DomainError("step must be positive")
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if self.restarts < 1:
            raise DomainError("restarts must be >= 1")


@dataclass
class GsResult:
    constellation: Constellation
    trace: np.ndarray
    restart: int
    champions: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# geometry

def _points(c) -> np.ndarray:
    return c.points if isinstance(c, Constellation) else np.asarray(c, dtype=np.float64)


def pairwise_sq_distances(points) -> np.ndarray:
    z = _points(points)
    diff = z[..., :, None, :] - z[..., None, :, :]
    return np.einsum("...ijk,...ijk->...ij", diff, diff)


def min_distance(points) -> np.ndarray | float:
    d2 = pairwise_sq_distances(points)
    m = d2.shape[-1]
    iu = np.triu_indices(m, 1)
    out = np.sqrt(np.min(d2[..., iu[0], iu[1]], axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def asymptotic_pe(c, n0: float) -> float:
    """High-SNR symbol error approximation ``exp(-d_min^2 / (8 n0))``.

    Coincident points give 1.0 and emit :class:`DegenerateGeometryWarning`.
    """
    if not n0 > 0:
        raise DomainError("n0 must be positive")
    dmin = min_distance(c)
    if dmin == 0.0:
        warnings.warn("constellation has coincident points", DegenerateGeometryWarning, stacklevel=2)
        return 1.0
    return math.exp(-dmin * dmin / (8.0 * n0))


def pe_surrogate(c, n0: float) -> float:
    """Smooth pairwise error sum whose gradient is :func:`pe_gradient`.

    ``sum_{i<j} exp(-d_ij^2 / (8 n0)) / d_ij``: each term is the large-argument
    Gaussian tail of one pairwise confusion, up to constant factors.
    """
    d2 = pairwise_sq_distances(c)
    iu = np.triu_indices(d2.shape[-1], 1)
    d2 = d2[..., iu[0], iu[1]]
    return float(np.sum(np.exp(-d2 / (8.0 * n0)) / np.sqrt(d2)))


def _gradient(z: np.ndarray, n0: float) -> np.ndarray:
    # z: (..., M, d)
    diff = z[..., :, None, :] - z[..., None, :, :]
    d2 = np.einsum("...ijk,...ijk->...ij", diff, diff)
    m = z.shape[-2]
    eye = np.eye(m, dtype=bool)
    if np.any(d2[..., ~eye] == 0.0):
        raise DegenerateGeometryError("coincident constellation points; gradient undefined")
    d2 = np.where(eye, np.inf, d2)
    dist = np.sqrt(d2)
    weight = np.exp(-d2 / (8.0 * n0)) * (1.0 / d2 + 1.0 / (4.0 * n0)) / dist
    return -np.einsum("...ij,...ijk->...ik", weight, diff)


def pe_gradient(c, n0: float) -> np.ndarray:
    """Gradient of the error surrogate w.r.t. every point, one row per point.

    Row ``m`` is ``-sum_{i != m} exp(-|z_m - z_i|^2/(8 n0)) (1/|z_m - z_i|^2
    + 1/(4 n0)) u_{mi}`` with ``u_{mi}`` the unit vector from ``z_i`` to
    ``z_m``.
    """
    if not n0 > 0:
        raise DomainError("n0 must be positive")
    return _gradient(_points(c), n0)


def _rescale(z: np.ndarray, p_av: float) -> np.ndarray:
    m = z.shape[-2]
    total = np.sum(z * z, axis=(-2, -1), keepdims=True)
    if np.any(total == 0.0):
        raise DegenerateGeometryError("all points at the origin; cannot meet the power budget")
    return z * np.sqrt(m * p_av / total)


def gs_step(c: Constellation, cfg: GsConfig) -> Constellation:
    """One descent step followed by rescaling onto the power budget."""
    z = c.points - cfg.step * _gradient(c.points, cfg.n0)
    return Constellation(_rescale(z, c.p_av), c.p_av)


def _descend(z: np.ndarray, cfg: GsConfig, p_av: float):
    """Run ``cfg.max_steps`` steps on a batch ``(R, M, d)``; returns points and trace."""
    z = _rescale(z, p_av)
    trace = np.empty((cfg.max_steps + 1, z.shape[0]))
    trace[0] = min_distance(z)
    for k in range(1, cfg.max_steps + 1):
        z = _rescale(z - cfg.step * _gradient(z, cfg.n0), p_av)
        trace[k] = min_distance(z)
    return z, trace


def initial_points(M: int, d: int, seed: int) -> np.ndarray:
    """Uniform draw from the unit ``d``-ball, one stream per seed."""
    return Rng(seed).unit_ball(M, d)


def optimize(M: int, d: int, cfg: GsConfig) -> GsResult:
    """Best-of-restarts gradient search.

    Restart ``r`` starts from points drawn uniformly in the unit ball with
    seed ``cfg.seed + r``.  The winner has the largest minimum distance;
    ties go to the lower asymptotic error, then to the lower restart index.
    """
    if M < 2 or d < 1:
        raise ShapeError(f"need M >= 2 and d >= 1, got M={M}, d={d}")
    p_av = cfg.p_av if cfg.p_av is not None else 1.0 / M
    z0 = np.stack([initial_points(M, d, cfg.seed + r) for r in range(cfg.restarts)])
    z, trace = _descend(z0, cfg, p_av)
    dmins = trace[-1]
    pes = np.exp(-dmins ** 2 / (8.0 * cfg.n0))
    best = min(range(cfg.restarts), key=lambda r: (-dmins[r], pes[r], r))
    return GsResult(Constellation(z[best], p_av), trace[:, best].copy(), best, list(map(float, dmins)))


# --------------------------------------------------------------------------
# shape diagnostics

def triangle_angles(c) -> np.ndarray:
    """Interior angles (degrees) of the Delaunay triangulation of a planar constellation.

    At every vertex these are the angular gaps between consecutive natural
    neighbours; a hexagonal lattice gives 60 degrees throughout.
    """
    from scipy.spatial import Delaunay

    z = _points(c)
    if z.shape[1] != 2:
        raise ShapeError("triangle angles are defined for d = 2 only")
    angles = []
    for simplex in Delaunay(z).simplices:
        p = z[simplex]
        for i in range(3):
            a = p[(i + 1) % 3] - p[i]
            b = p[(i + 2) % 3] - p[i]
            cosang = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
            angles.append(math.degrees(math.acos(np.clip(cosang, -1.0, 1.0))))
    return np.array(angles)


# --------------------------------------------------------------------------
# CSV

def write_constellation_csv(path, c: Constellation) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m"] + [f"x{k + 1}" for k in range(c.d)])
        for m, row in enumerate(c.points):
            w.writerow([m] + [f"{x:.17g}" for x in row])


def read_constellation_csv(path, p_av: float | None = None) -> Constellation:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "m" or any(h != f"x{k + 1}" for k, h in enumerate(header[1:])):
        raise ValueError(f"unexpected constellation header {header}")
    pts = np.array([[float(x) for x in r[1:]] for r in body])
    if p_av is None:
        p_av = float(np.mean(np.sum(pts ** 2, axis=1)))
    return Constellation(pts, p_av)
