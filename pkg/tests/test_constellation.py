import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physlab.constellation import (
    Constellation,
    DegenerateGeometryError,
    DegenerateGeometryWarning,
    GsConfig,
    asymptotic_pe,
    gs_step,
    min_distance,
    optimize,
    pe_gradient,
    pe_surrogate,
    read_constellation_csv,
    triangle_angles,
    write_constellation_csv,
)
from physlab.numkit import DomainError, Rng


def fd_gradient(points, n0, h=1e-6):
    g = np.zeros_like(points)
    for idx in np.ndindex(points.shape):
        up, dn = points.copy(), points.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (pe_surrogate(up, n0) - pe_surrogate(dn, n0)) / (2 * h)
    return g


def mc_ser_nearest(points, n0, n_draws, seed):
    """Nearest-neighbour SER with per-dimension noise variance 2*n0/d."""
    rng = Rng(seed)
    m, d = points.shape
    sym = rng.integers(0, m, n_draws)
    rx = points[sym] + rng.normal((n_draws, d), scale=math.sqrt(2 * n0 / d))
    dist = ((rx[:, None, :] - points[None]) ** 2).sum(-1)
    return float(np.mean(dist.argmin(1) != sym))


def test_constellation_validates_power():
    with pytest.raises(DomainError):
        Constellation(np.array([[1.0], [-1.0]]), p_av=0.5)
    c = Constellation.normalized([[2.0], [-1.0]], p_av=0.5)
    assert c.power == pytest.approx(0.5, abs=1e-15)


class TestAsymptoticPe:
    def test_antipodal(self):
        c = Constellation(np.array([[1.0], [-1.0]]) / math.sqrt(2), 0.5)
        assert asymptotic_pe(c, 0.25) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_duplicate_point(self):
        c = Constellation(np.array([[0.1, 0.0], [0.1, 0.0], [-0.2, 0.0]]), 1.0)
        with pytest.warns(DegenerateGeometryWarning):
            assert asymptotic_pe(c, 0.1) == 1.0

    def test_monotone_in_min_distance(self):
        pes = [asymptotic_pe(Constellation(np.array([[s], [-s]]), 1.0), 0.1) for s in (0.1, 0.2, 0.5, 0.9)]
        assert all(a > b for a, b in zip(pes, pes[1:]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2 * math.pi))
    def test_rotation_invariance(self, seed, angle):
        pts = Rng(seed).normal((6, 2))
        c = Constellation.normalized(pts, 1 / 6)
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        c2 = Constellation(c.points @ rot.T, 1 / 6 * (1 + 1e-12))
        assert min_distance(c2) == pytest.approx(min_distance(c), abs=1e-12)
        assert asymptotic_pe(c2, 0.05) == pytest.approx(asymptotic_pe(c, 0.05), abs=1e-12)

    def test_hexagonal_beats_square_grid(self):
        # optimized 8-point set vs a 2x4 rectangular grid at equal power
        n0 = 0.05
        opt = optimize(8, 2, GsConfig(n0=n0, restarts=5, seed=3)).constellation
        grid = Constellation.normalized([[x, y] for x in (-1.5, -0.5, 0.5, 1.5) for y in (-0.5, 0.5)], 1 / 8)
        assert asymptotic_pe(opt, n0) < asymptotic_pe(grid, n0)
        # Monte-Carlo SER at a moderately high SNR, same ordering
        mc_n0 = 0.002
        ser_opt = mc_ser_nearest(opt.points, mc_n0, 200_000, 1)
        ser_grid = mc_ser_nearest(grid.points, mc_n0, 200_000, 1)
        assert ser_opt < ser_grid


class TestGradient:
    def test_antipodal_equal_and_opposite(self):
        g = pe_gradient(np.array([[0.7], [-0.7]]), 0.1)
        np.testing.assert_allclose(g[0], -g[1])

    def test_triangle_radial(self):
        ang = np.array([0, 2 * math.pi / 3, 4 * math.pi / 3])
        pts = 0.4 * np.c_[np.cos(ang), np.sin(ang)]
        g = pe_gradient(pts, 0.05)
        mags = np.linalg.norm(g, axis=1)
        np.testing.assert_allclose(mags, mags[0], rtol=1e-12)
        # descent direction (-g) points outward along the radius
        for p, gi in zip(pts, g):
            cos = np.dot(-gi, p) / (np.linalg.norm(gi) * np.linalg.norm(p))
            assert cos == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        pts = Rng(seed).normal((5, 2)) * 0.4
        g = pe_gradient(pts, 0.05)
        fd = fd_gradient(pts, 0.05)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5

    def test_coincident_points(self):
        with pytest.raises(DegenerateGeometryError):
            pe_gradient(np.array([[0.1, 0.2], [0.1, 0.2], [0.0, 0.0]]), 0.1)


class TestGsStep:
    def test_fixed_point(self):
        c = Constellation(np.array([[1.0], [-1.0]]) / math.sqrt(2), 0.5)
        out = gs_step(c, GsConfig(n0=0.1, step=1e-3))
        np.testing.assert_allclose(out.points, c.points, atol=1e-15)

    def test_power_equality(self):
        c = Constellation.normalized(Rng(1).normal((8, 2)), 1 / 8)
        out = gs_step(c, GsConfig(n0=0.05))
        assert out.power == pytest.approx(1 / 8, abs=1e-12)

    def test_min_distance_does_not_drop_near_optimum(self):
        best = optimize(8, 2, GsConfig(n0=0.05, restarts=3, max_steps=2000, seed=11)).constellation
        pert = Constellation.normalized(best.points + 1e-3 * Rng(4).normal((8, 2)), 1 / 8)
        out = gs_step(pert, GsConfig(n0=0.05))
        assert min_distance(out) >= min_distance(pert) - 1e-12

    def test_degenerate_propagates(self):
        c = Constellation(np.array([[0.1, 0.0], [0.1, 0.0], [-0.2, 0.0]]), 1.0)
        with pytest.raises(DegenerateGeometryError):
            gs_step(c, GsConfig())


class TestOptimize:
    def test_antipodal_optimum(self):
        res = optimize(2, 1, GsConfig(n0=0.1, step=0.05, max_steps=2000, restarts=4, seed=0))
        np.testing.assert_allclose(np.sort(res.constellation.points.ravel()),
                                   [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-3)

    def test_trace_shape_and_power(self):
        cfg = GsConfig(max_steps=50, restarts=2, seed=5)
        res = optimize(8, 2, cfg)
        assert res.trace.shape == (51,)
        assert res.constellation.power == pytest.approx(1 / 8, abs=1e-12)
        assert res.trace[-1] == pytest.approx(min_distance(res.constellation))

    def test_deterministic(self):
        a = optimize(8, 2, GsConfig(max_steps=100, restarts=3, seed=9))
        b = optimize(8, 2, GsConfig(max_steps=100, restarts=3, seed=9))
        assert np.array_equal(a.constellation.points, b.constellation.points)

    def test_restart_seeds_are_seed_plus_index(self):
        full = optimize(8, 2, GsConfig(max_steps=30, restarts=3, seed=20))
        single = optimize(8, 2, GsConfig(max_steps=30, restarts=1, seed=22))
        assert full.champions[2] == pytest.approx(single.champions[0], abs=1e-13)

    def test_sixteen_points_form_triangular_lattice(self):
        res = optimize(16, 2, GsConfig(n0=0.05, restarts=10, seed=1))
        angles = triangle_angles(res.constellation)
        assert np.mean(np.abs(angles - 60.0) < 10.0) >= 0.6


def test_csv_round_trip(tmp_path):
    c = Constellation.normalized(Rng(3).normal((8, 3)), 1 / 8)
    path = tmp_path / "c.csv"
    write_constellation_csv(path, c)
    assert path.read_text().splitlines()[0] == "m,x1,x2,x3"
    back = read_constellation_csv(path, 1 / 8)
    assert np.array_equal(back.points, c.points)
