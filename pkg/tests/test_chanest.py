import math

import numpy as np
import pytest

from physlab import chanest, neural
from physlab.chanest import OfdmChannelModel, exponential_model
from physlab.numkit import DomainError, Rng


def test_single_tap_gives_flat_response():
    h = chanest.sample_channel(OfdmChannelModel(16, np.array([1.0])), Rng(0), 5)
    np.testing.assert_allclose(h, h[:, :1] * np.ones((1, 16)), atol=1e-12)


def test_full_uniform_profile_is_white():
    m = OfdmChannelModel(8, np.full(8, 1 / 8))
    np.testing.assert_allclose(m.r_hh, np.eye(8), atol=1e-12)


def test_empirical_covariance_matches_analytic():
    m = exponential_model(64, taps=4)
    h = chanest.sample_channel(m, Rng(1), 50_000)
    r_emp = h.T @ h.conj() / h.shape[0]
    r = m.r_hh
    assert np.linalg.norm(r_emp - r) / np.linalg.norm(r) < 0.05


def test_model_validation():
    with pytest.raises(DomainError):
        OfdmChannelModel(4, np.ones(5))
    with pytest.raises(DomainError):
        OfdmChannelModel(4, np.array([1.0, -0.1]))


def test_ls_noiseless_limit():
    h = chanest.sample_channel(exponential_model(16), Rng(2), 3)
    v = chanest.ls_estimate(exponential_model(16), h, 1e-30, Rng(3))
    np.testing.assert_allclose(v, h, atol=1e-12)


def test_ls_analytic_substitution():
    assert abs(chanest.ls_mse(exponential_model(2, taps=1), 0.1) - 0.2) < 1e-15


@pytest.mark.parametrize("d", [16, 64])
@pytest.mark.parametrize("var", [0.01, 0.1, 1.0])
def test_ls_monte_carlo(d, var):
    m = exponential_model(d)
    h = chanest.sample_channel(m, Rng(4), 100_000)
    v = chanest.ls_estimate(m, h, var, Rng(5))
    mse = np.mean(np.sum(np.abs(v - h) ** 2, axis=1))
    assert abs(mse / chanest.ls_mse(m, var) - 1) < 0.02


def test_lmmse_white_prior_halves_observation():
    m = OfdmChannelModel(4, np.full(4, 0.25))
    v = Rng(6).complex_normal((3, 4))
    np.testing.assert_allclose(chanest.lmmse_estimate(m, v, 1.0), v / 2, atol=1e-12)
    assert abs(chanest.lmmse_mse(m, 0.3) - 4 * 0.3 / 1.3) < 1e-12


def test_lmmse_monte_carlo_and_below_ls():
    m = exponential_model(64)
    for snr in (0, 10, 20):
        var = chanest.noise_var_for_snr(snr)
        h = chanest.sample_channel(m, Rng(7), 100_000)
        v = chanest.ls_estimate(m, h, var, Rng(8))
        est = chanest.lmmse_estimate(m, v, var)
        mse = np.mean(np.sum(np.abs(est - h) ** 2, axis=1))
        assert abs(mse / chanest.lmmse_mse(m, var) - 1) < 0.02
        assert mse <= chanest.ls_mse(m, var)


def test_mi_closed_forms():
    white = OfdmChannelModel(6, np.full(6, 1 / 6))
    assert abs(chanest.analytic_gaussian_mi(white, 1.0) - 6 * math.log(2)) < 1e-9
    assert chanest.analytic_gaussian_mi(white, 1e8) < 1e-6


def test_mi_matches_plug_in_estimate():
    m = exponential_model(64, taps=4)
    var = 0.1
    n = 100_000
    h = chanest.sample_channel(m, Rng(9), n)
    v = chanest.ls_estimate(m, h, var, Rng(10))
    noise = v - h
    # I(h; v) = log|R_vv| - log|R_nn| for the additive Gaussian model
    r_vv = v.T @ v.conj() / n
    r_nn = noise.T @ noise.conj() / n
    mc = np.linalg.slogdet(r_vv)[1] - np.linalg.slogdet(r_nn)[1]
    exact = chanest.analytic_gaussian_mi(m, var)
    assert abs(mc / exact - 1) < 0.05


def test_dataset_without_interpolation_is_ls():
    m = exponential_model(16)
    ds = chanest.build_dataset(m, 10, 10.0, 1, Rng(1))
    v_ref = chanest.ls_estimate(m, ds.z, chanest.noise_var_for_snr(10.0), Rng(1).spawn("noise"))
    np.testing.assert_array_equal(ds.v, v_ref)


@pytest.mark.parametrize("spacing", [2, 4, 8])
def test_flat_channel_interpolates_exactly(spacing):
    m = OfdmChannelModel(16, np.array([1.0]))
    ds = chanest.build_dataset(m, 4, 300.0, spacing, Rng(2))
    np.testing.assert_allclose(ds.v, ds.z, atol=1e-12)


@pytest.mark.parametrize("snr", [25.0, 30.0])
def test_interpolation_error_dominates_at_high_snr(snr):
    m = exponential_model(64)
    ds = chanest.build_dataset(m, 5000, snr, 4, Rng(3))
    mse = np.mean(np.sum(np.abs(ds.v - ds.z) ** 2, axis=1))
    assert mse > chanest.ls_mse(m, chanest.noise_var_for_snr(snr))


def test_interpolation_averages_noise_at_low_snr():
    # between pilots the estimate mixes two independent noise samples
    m = exponential_model(64)
    ds = chanest.build_dataset(m, 5000, 10.0, 4, Rng(3))
    mse = np.mean(np.sum(np.abs(ds.v - ds.z) ** 2, axis=1))
    assert mse < chanest.ls_mse(m, chanest.noise_var_for_snr(10.0))


def test_dataset_rejects_bad_spacing():
    with pytest.raises(DomainError):
        chanest.build_dataset(exponential_model(64), 10, 10.0, 5, Rng(0))


def test_real_packing_round_trip():
    c = Rng(3).complex_normal((4, 8))
    np.testing.assert_array_equal(chanest.from_real(chanest.to_real(c)), c)


def test_estimator_training_is_deterministic():
    ds = chanest.build_dataset(exponential_model(16), 50, 10.0, 1, Rng(4))
    a, _ = chanest.train_nn_estimator(ds, 1, 16, 5, 1e-3, 25, Rng(5))
    b, _ = chanest.train_nn_estimator(ds, 1, 16, 5, 1e-3, 25, Rng(5))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)


@pytest.mark.slow
def test_small_training_set_beats_ls_but_not_lmmse():
    m = exponential_model(64)
    var = chanest.noise_var_for_snr(10.0)
    train = chanest.build_dataset(m, 100, 10.0, 1, Rng(6))
    test = chanest.build_dataset(m, 2000, 10.0, 1, Rng(7))
    net, tr = chanest.train_nn_estimator(train, 1, 128, 2000, 1e-3, 100, Rng(8))
    assert not tr.diverged
    err = np.sum((neural.forward(net, chanest.to_real(test.v))[-1] - chanest.to_real(test.z)) ** 2, axis=1)
    mse = err.mean()
    assert mse < chanest.ls_mse(m, var)
    assert mse >= chanest.lmmse_mse(m, var) - 3 * err.std() / math.sqrt(err.size)


def test_single_depth_sweep_equals_direct_evaluation():
    m = exponential_model(16)
    rng = Rng(9)
    means, per_trial = chanest.depth_sweep(m, 40, [1], 1, rng, width=16, epochs=3, n_test=50)
    trng = rng.spawn("trial", 0)
    train = chanest.build_dataset(m, 40, 10.0, 1, trng.spawn("train"))
    test = chanest.build_dataset(m, 50, 10.0, 1, trng.spawn("test"))
    net, _ = chanest.train_nn_estimator(train, 1, 16, 3, 1e-3, 100, trng.spawn("net", 1))
    assert list(means) == [1]
    assert means[1] == per_trial[0, 0] == chanest.estimator_mse(net, test)


def test_depth_sweep_rejects_unsorted_depths():
    with pytest.raises(DomainError):
        chanest.depth_sweep(exponential_model(16), 10, [3, 1], 1, Rng(0))


def test_csv_writers(tmp_path):
    r = [chanest.EstimatorReport("ls", 1.5, 10, 5.0)]
    chanest.write_sweep_csv(tmp_path / "s.csv", r)
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "estimator,snr_db,n_train,depth,width,mse,n_test,seed", "ls,5,0,0,0,1.5,10,0"]
    ds = chanest.build_dataset(exponential_model(16), 2, 10.0, 1, Rng(0))
    chanest.write_dataset_csv(tmp_path / "d.csv", ds)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "sample,subcarrier,v_re,v_im,z_re,z_im" and len(lines) == 33
