"""Small deterministic numerical kernel shared by every physlab module.

Matrices are plain ``numpy`` arrays: ``float64`` for real matrices and
``complex128`` for complex ones.  What lives here is the handful of routines
whose behaviour the rest of the package pins down exactly: a cyclic Jacobi
eigensolver, a Cholesky-based Hermitian solver that reports the failing
pivot, a seeded Box-Muller Gaussian source with named stream derivation, and
bivariate Gaussian quadrature rules.
"""
from __future__ import annotations

import math
import zlib
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_triangular
from scipy.special import gamma as gamma_fn

__all__ = [
    "ShapeError",
    "SymmetryError",
    "SingularityError",
    "DomainError",
    "Rng",
    "derive_seed",
    "as_mat",
    "sym_eig",
    "jacobi_eig",
    "cholesky",
    "herm_solve",
    "logdet_hpd",
    "gauss_hermite_2d",
    "homogeneous_gauss_2d",
]


class ShapeError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


class DomainError(ValueError):
    pass


class SingularityError(ArithmeticError):
    """Raised when a factorisation meets a non-positive pivot."""

    def __init__(self, pivot: int, value: float, message: str | None = None):
        self.pivot = pivot
        self.value = value
        super().__init__(
            message or f"matrix is not positive definite: pivot {pivot} has value {value!r}"
        )


# --------------------------------------------------------------------------
# random numbers

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *names: object) -> int:
    """Deterministically derive a 64-bit child seed from ``seed`` and a path of names.

    The derivation only depends on the values passed, never on call order, so
    a sweep point gets the same stream whether it runs first or last.
    """
    key = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for name in names:
        key.append(zlib.crc32(repr(name).encode("utf-8")))
    state = np.random.SeedSequence(key).generate_state(2, dtype=np.uint64)
    return int(state[0]) & _MASK64


class Rng:
    """Seeded random stream.  Gaussian variates come from Box-Muller pairs.

    Equal seeds give bit-identical streams.  The object is stateful and meant
    to have a single owner; use :meth:`spawn` to hand independent streams to
    workers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def spawn(self, *names: object) -> "Rng":
        return Rng(derive_seed(self.seed, *names))

    def uniform(self, size=None) -> np.ndarray | float:
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray | float:
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = scale * z[:n]
        if size is None:
            return float(z[0])
        return z.reshape(shape)

    def complex_normal(self, size, var: float = 1.0) -> np.ndarray:
        """Circularly-symmetric complex Gaussian with ``E|x|^2 = var``."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        parts = self.normal(shape + (2,), scale=math.sqrt(var / 2.0))
        return parts[..., 0] + 1j * parts[..., 1]

    def unit_ball(self, n: int, d: int) -> np.ndarray:
        """``n`` points uniform in the unit ``d``-ball."""
        g = self.normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.uniform(n) ** (1.0 / d)
        return g * r[:, None]


# --------------------------------------------------------------------------
# validation

def as_mat(a, *, square: bool = False, dtype=np.float64, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def _check_symmetric(a: np.ndarray, tol: float, name: str = "matrix") -> None:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    gap = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if gap > tol * scale:
        raise SymmetryError(f"{name} is not symmetric/Hermitian: max |A - A^H| = {gap:.3e}")


# --------------------------------------------------------------------------
# eigendecomposition

def jacobi_eig(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors as columns.
    """
    a = as_mat(a, square=True)
    _check_symmetric(a, tol)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    frob = np.linalg.norm(a)
    if n <= 1 or frob == 0.0:
        return _sorted(np.diag(a).copy(), v)
    target = tol * frob
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a[offdiag]))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300 or abs(apq) < 1e-3 * target / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ArithmeticError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    return _sorted(np.diag(a).copy(), v)


def _sorted(w: np.ndarray, v: np.ndarray):
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


# Jacobi is O(n^3) per sweep in Python loops; past this size hand off to LAPACK.
JACOBI_MAX_N = 16


def sym_eig(a, tol: float = 1e-12, method: str = "auto"):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_N`` rows, LAPACK ``syevd`` beyond).
    """
    a = as_mat(a, square=True)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        return jacobi_eig(a, tol)
    if method != "lapack":
        raise ValueError(f"unknown eigen method {method!r}")
    _check_symmetric(a, max(tol, 1e-12))
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return w[::-1].copy(), v[:, ::-1].copy()


def sym_eigvals(a, tol: float = 1e-12, method: str = "auto") -> np.ndarray:
    """Eigenvalues only, descending.  Cheaper than :func:`sym_eig` on LAPACK."""
    a = as_mat(a, square=True)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        return jacobi_eig(a, tol)[0]
    _check_symmetric(a, max(tol, 1e-12))
    return np.linalg.eigvalsh(0.5 * (a + a.T))[::-1].copy()


# --------------------------------------------------------------------------
# Hermitian positive-definite systems

def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive-definite matrix.

    Raises :class:`SingularityError` carrying the index of the first
    non-positive pivot.
    """
    a = np.asarray(a)
    dtype = np.complex128 if np.iscomplexobj(a) else np.float64
    a = as_mat(a, square=True, dtype=dtype)
    _check_symmetric(a, 1e-10)
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        pivot = float(np.real(a[j, j] - np.vdot(row, row)))
        if not pivot > 0.0 or not math.isfinite(pivot):
            raise SingularityError(j, pivot)
        d = math.sqrt(pivot)
        low[j, j] = d
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ row.conj()) / d
    return low


def herm_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian positive-definite ``a``.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    low = cholesky(a)
    b = np.asarray(b)
    if b.shape[0] != low.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, system has {low.shape[0]}")
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.conj().T, y, lower=False)


def logdet_hpd(a) -> float:
    """``log det a`` for Hermitian positive-definite ``a`` (natural log)."""
    low = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.real(np.diag(low)))))


# --------------------------------------------------------------------------
# bivariate Gaussian expectations

def _psd_factor(cov) -> np.ndarray:
    cov = as_mat(cov, square=True)
    if cov.shape != (2, 2):
        raise ShapeError(f"covariance must be 2x2, got {cov.shape}")
    if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(cov)))):
        raise DomainError("covariance is not symmetric")
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w[0] < -1e-12 * max(1.0, abs(w[1])):
        raise DomainError(f"covariance is not positive semi-definite (eigenvalue {w[0]:.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def gauss_hermite_2d(cov, f: Callable[[np.ndarray, np.ndarray], np.ndarray], order: int = 32) -> float:
    """``E[f(u, v)]`` for ``(u, v) ~ N(0, cov)`` by a tensor Gauss-Hermite rule.

    Exact for polynomials of degree up to ``2*order - 1`` in each variable.
    ``f`` must accept broadcast numpy arrays.
    """
    if order < 8:
        raise DomainError("quadrature order must be at least 8")
    factor = _psd_factor(cov)
    x, w = hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    u = factor[0, 0] * gx + factor[0, 1] * gy
    v = factor[1, 0] * gx + factor[1, 1] * gy
    return float(np.sum(np.outer(w, w) * f(u, v)))


def homogeneous_gauss_2d(cov, f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                         degree: float, order: int = 32) -> float:
    """``E[f(u, v)]`` for positively homogeneous ``f`` of the given degree.

    Integrates in polar coordinates: the radial part is exact
    (``E[r**degree]`` of a Rayleigh variable) and the angular part uses
    Gauss-Legendre panels split where ``u`` or ``v`` changes sign, so
    kinks of ReLU-type integrands sit on panel edges.
    """
    factor = _psd_factor(cov)
    breaks = [0.0, 2.0 * math.pi]
    for row in factor:
        if np.any(row != 0.0):
            base = math.atan2(-row[0], row[1]) % math.pi
            breaks += [base, base + math.pi]
    breaks = np.unique(np.round(np.array(breaks), 15))
    nodes, weights = leggauss(order)
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi - lo <= 0.0:
            continue
        theta = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        c, s = np.cos(theta), np.sin(theta)
        u = factor[0, 0] * c + factor[0, 1] * s
        v = factor[1, 0] * c + factor[1, 1] * s
        total += 0.5 * (hi - lo) * float(np.sum(weights * f(u, v)))
    radial = 2.0 ** (degree / 2.0) * gamma_fn(1.0 + degree / 2.0)
    return radial * total / (2.0 * math.pi)
