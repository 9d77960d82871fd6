import math

import numpy as np
import pytest

from physlab import endtoend, neural, ntk
from physlab.numkit import DomainError, Rng, ShapeError, sym_eigvals


def _net(d=3, m=16, depth=2, act="relu", seed=0, bias=False):
    widths = (d,) + (m,) * depth + (1,)
    return neural.init(widths, (act,) * depth + ("linear",), Rng(seed), bias=bias)


def _flat_grad(net, x):
    fp = neural.forward(net, x[None, :])
    seed = np.ones((1, 1))
    dzs, _ = neural.deltas(net, fp, seed)
    parts = [np.outer(dz[0], fp[h][0]) for h, dz in enumerate(dzs)]
    return parts, [dz[0] for dz in dzs]


def test_single_input_gram_is_squared_gradient_norm():
    net = _net()
    x = Rng(1).normal((1, 3))
    per, total = ntk.empirical_gram(net, x)
    parts, _ = _flat_grad(net, x[0])
    assert total.shape == (1, 1)
    assert total[0, 0] == pytest.approx(sum(float(np.sum(p * p)) for p in parts), rel=1e-12)
    assert total[0, 0] >= 0


def test_duplicated_inputs_duplicate_rows():
    x = Rng(2).normal((3, 3))
    x[1] = x[0]
    _, g = ntk.empirical_gram(_net(), x)
    np.testing.assert_array_equal(g[0], g[1])
    np.testing.assert_array_equal(g[:, 0], g[:, 1])


@pytest.mark.parametrize("bias", [False, True])
def test_gram_matches_outer_product_oracle(bias):
    net = _net(bias=bias, act="softplus")
    x = Rng(3).normal((4, 3))
    per, total = ntk.empirical_gram(net, x)
    grads = [_flat_grad(net, xi) for xi in x]
    for h in range(net.depth):
        oracle = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                oracle[i, j] = np.sum(grads[i][0][h] * grads[j][0][h])
                if bias:
                    oracle[i, j] += np.dot(grads[i][1][h], grads[j][1][h])
        np.testing.assert_allclose(per[h], oracle, atol=1e-12, rtol=0)
    np.testing.assert_allclose(total, sum(per), atol=1e-12)


def test_equal_unit_inputs_preserve_variance():
    x = np.array([[0.6, 0.8], [0.6, 0.8]])
    k1 = ntk.limit_gram(x, 2, "relu", return_all=True)[1]
    np.testing.assert_allclose(k1, np.ones((2, 2)), atol=1e-12)


def test_orthogonal_inputs_give_one_over_pi():
    k1 = ntk.limit_gram(np.eye(2), 2, "relu", return_all=True)[1]
    assert k1[0, 1] == pytest.approx(1 / math.pi, abs=1e-12)


@pytest.mark.parametrize("act", ["relu", "softplus", "linear"])
def test_limit_is_symmetric_psd(act):
    k = ntk.limit_gram(Rng(4).normal((7, 5)), 3, act)
    assert np.array_equal(k, k.T)
    assert sym_eigvals(k).min() >= -1e-8


def test_relu_limit_matches_arccos_closed_form():
    x = ntk.normalize_inputs(Rng(5).normal((6, 4)))
    ks = ntk.limit_gram(x, 3, "relu", return_all=True)
    for h in (1, 2):
        prev = ks[h - 1]
        for i in range(6):
            for j in range(6):
                e = ntk.arccos_kernel(prev[i, i], prev[i, j], prev[j, j], 1)
                assert abs(ks[h][i, j] - 2 * e) < 1e-6
    prev = ks[2]
    for i in range(6):
        for j in range(6):
            e = ntk.arccos_kernel(prev[i, i], prev[i, j], prev[j, j], 0)
            assert abs(ks[3][i, j] - 2 * prev[i, j] * e) < 1e-6


def test_linear_depth_one_limit_is_input_gram():
    x = ntk.normalize_inputs(Rng(6).normal((5, 3)))
    np.testing.assert_allclose(ntk.limit_gram(x, 1, "linear"), x @ x.T, atol=1e-14)


def test_limit_rejects_bad_arguments():
    with pytest.raises(DomainError):
        ntk.limit_gram(np.eye(2), 0)
    with pytest.raises(DomainError):
        ntk.limit_gram(np.eye(2), 1, "softmax")
    with pytest.raises(DomainError):
        ntk.normalize_inputs(np.zeros((2, 2)))


def test_softplus_quadrature_settles():
    k = ntk.limit_gram(Rng(7).normal((4, 3)), 2, "softplus")
    assert np.all(np.isfinite(k))


def test_spectral_distance_cases():
    a = Rng(8).normal((5, 5))
    a = a + a.T
    assert ntk.spectral_distance(a, a) == 0.0
    assert ntk.spectral_distance(a + 0.7 * np.eye(5), a) == pytest.approx(0.7, abs=1e-12)
    b = Rng(9).normal((5, 5))
    b = b + b.T
    assert ntk.spectral_distance(a, b) == pytest.approx(np.max(np.abs(np.linalg.eigvalsh(a - b))), abs=1e-12)
    with pytest.raises(ShapeError):
        ntk.spectral_distance(a, np.eye(4))


def test_width_sweep_single_width_equals_direct_evaluation():
    x = ntk.normalize_inputs(Rng(10).normal((4, 3)))
    rng = Rng(11)
    rows, summary = ntk.width_sweep(x, 2, [32], 1, rng)
    net = ntk.ntk_network(3, 32, 2, "relu", rng.spawn("net", 32, 0))
    per, _ = ntk.empirical_gram(net, x)
    (m, s, dist), = rows
    assert (m, s) == (32, 0)
    assert dist == pytest.approx(ntk.spectral_distance(per[1], ntk.limit_gram(x, 2)), rel=1e-12)
    assert summary[32][0] == rows[0][2]


def test_linear_depth_one_concentrates():
    x = np.eye(8)[:4]
    _, summary = ntk.width_sweep(x, 1, [800], 10, Rng(12), "linear")
    assert summary[800][0] < 0.1


@pytest.mark.slow
@pytest.mark.parametrize("act", ["relu", "softplus"])
def test_distance_falls_with_width(act):
    x = Rng(13).normal((8, 4))
    _, summary = ntk.width_sweep(x, 2, [50, 200, 800], 10, Rng(14), act)
    means = [summary[m][0] for m in (50, 200, 800)]
    assert means[0] > means[1] > means[2]


def _ae(kind, seed=0):
    ch = endtoend.ChannelLayer(kind, endtoend.noise_var_for_snr(25.0, 8, 2))
    return endtoend.build_system(8, 2, ch, Rng(seed))


def test_drift_starts_at_zero_and_stays_zero_without_steps():
    tr = ntk.fading_drift(_ae("awgn"), 30, 0.0, Rng(1), record_every=10)
    assert tr.iterations == [0, 10, 20, 30]
    assert np.all(tr.as_array() == 0.0)


def test_drift_is_scaled_frobenius_distance():
    ae = _ae("rayleigh_flat")
    start = [w.copy() for w in ae.encoder.weights + ae.decoder.weights]
    tr = ntk.fading_drift(ae, 50, 0.1, Rng(2), record_every=50)
    now = ae.encoder.weights + ae.decoder.weights
    want = [np.linalg.norm(w - w0) / math.sqrt(w.shape[0]) for w, w0 in zip(now, start)]
    np.testing.assert_allclose(tr.drift[-1], want, rtol=1e-12)
    assert tr.transmitter()[-1] == pytest.approx(np.mean(want[:2]), rel=1e-12)


@pytest.mark.slow
def test_fading_drift_exceeds_awgn():
    wins = 0
    for seed in range(5):
        pair = ntk.drift_pair(8, 2, 25.0, 10_000, 0.1, seed, record_every=10_000)
        wins += pair["rayleigh_flat"][0].transmitter()[-1] > pair["awgn"][0].transmitter()[-1]
    assert wins >= 4


def test_csv_writers(tmp_path):
    ntk.write_sweep_csv(tmp_path / "s.csv", [(50, 0, 0.25)], 2)
    assert (tmp_path / "s.csv").read_text() == "width,depth,seed,layer,distance\n50,2,0,2,0.25\n"
    tr = ntk.fading_drift(_ae("awgn"), 2, 0.1, Rng(1))
    ntk.write_drift_csv(tmp_path / "d.csv", [tr])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "iteration,layer,drift,channel_kind,seed"
    assert len(lines) == 1 + 3 * 4
