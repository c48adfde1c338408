import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import signal

from fce_ddpc import ExcitationSpec, benchmark_plant, simulate_open_loop
from fce_ddpc.arx import (ArxModel, SingularGramError, fit_arx, fit_arx_prior,
                          residual_sigma2, select_order_aic)
from fce_ddpc.hankel import Dataset, HankelBlock, partition

SIGMA2 = 4.81e-3


def _first_order(n=300, seed=0):
    u = np.random.default_rng(seed).standard_normal(n)
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = 0.5 * y[t - 1] + 1.0 * u[t - 1]
    return Dataset(u, y)


def _unscaled_regressors(ds, rho):
    """Lag-ordered regressors built sample by sample."""
    y, u = ds.y_log[:, 0], ds.u_log[:, 0]
    X = np.array([[v for k in range(1, rho + 1) for v in (y[t - k], u[t - k])]
                  for t in range(rho, ds.N_data)])
    return X, y[rho:]


def arx2_dataset(seed, N=2000, snr_db=20.0):
    rng = np.random.default_rng(seed)
    a, b = [1.0, -1.5, 0.7], [0.0, 1.0, 0.5]
    u = rng.standard_normal(N + 100)
    x = signal.lfilter(b, a, u)
    e = rng.standard_normal(N + 100) * math.sqrt(np.var(x[100:]) / 10 ** (snr_db / 10))
    y = x + signal.lfilter([1.0], a, e)
    return Dataset(u[100:], y[100:])


def test_noise_free_first_order_recovery():
    m = fit_arx(partition(_first_order(), 1, 2))
    np.testing.assert_allclose(m.Theta, [[0.5, 1.0]], atol=1e-8)
    assert m.sigma2_hat < 1e-20


def test_zero_target_gives_zero_model():
    rng = np.random.default_rng(1)
    parts = partition(Dataset(rng.standard_normal(100), rng.standard_normal(100)), 2, 3)
    zero = HankelBlock(np.zeros_like(parts.Y_next.values), 3, 3, parts.N_arx, True)
    m = fit_arx(replace(parts, Y_next=zero))
    np.testing.assert_array_equal(m.theta_bar, 0.0)
    assert m.sigma2_hat == 0.0


def test_benchmark_golden_values(bench_data):
    # frozen from an independent lstsq fit on a dlsim-simulated record
    m = fit_arx(partition(bench_data, 4, 20))
    np.testing.assert_allclose(m.sigma2_hat, 0.0077733161324770395, rtol=1e-10)
    np.testing.assert_allclose(
        m.theta_bar[:4],
        [1.4107300189800422, 0.007777644700399544, -1.5723212314091553, 0.0035446472715656477],
        rtol=1e-9)


def test_normal_equation_oracle(bench_data):
    rho = 6
    m = fit_arx(partition(bench_data, rho, 20))
    X, Y = _unscaled_regressors(bench_data, rho)
    theta = np.linalg.solve(X.T @ X, X.T @ Y)
    np.testing.assert_allclose(m.theta_bar, theta, rtol=1e-10)
    np.testing.assert_allclose(m.S, np.linalg.inv(X.T @ X), rtol=1e-8)
    np.testing.assert_allclose(m.S, m.S.T)
    assert np.linalg.eigvalsh(m.S).min() > 0


def test_orthogonality(bench_parts, bench_model):
    Z = bench_parts.Z_arx.values
    Y = bench_parts.Y_next.values
    perm = np.concatenate([np.arange(2) + (bench_parts.rho - k) * 2
                           for k in range(1, bench_parts.rho + 1)])
    resid = Y - bench_model.Theta @ Z[perm]
    inner = resid @ Z.T
    assert np.abs(inner).max() < 1e-8 * np.linalg.norm(resid) * np.linalg.norm(Z)


def test_singular_gram():
    u = np.ones(60)
    with pytest.raises(SingularGramError):
        fit_arx(partition(Dataset(u, np.ones(60)), 2, 3))


def test_phi_blocks_and_covariance(bench_model):
    Th = bench_model.Theta
    assert Th.shape == (1, 12)
    np.testing.assert_array_equal(bench_model.phi(2), Th[:, 2:4])
    np.testing.assert_array_equal(bench_model.phi(7), np.zeros((1, 2)))
    np.testing.assert_allclose(bench_model.covariance(), bench_model.sigma2_hat * bench_model.S)


def test_json_roundtrip(tmp_path, bench_model):
    path = tmp_path / "m.json"
    bench_model.save(path)
    back = ArxModel.load(path)
    np.testing.assert_array_equal(back.theta_bar, bench_model.theta_bar)
    np.testing.assert_array_equal(back.S, bench_model.S)
    assert (back.rho, back.N, back.m, back.p, back.sigma2_hat) == (
        bench_model.rho, bench_model.N, 1, 1, bench_model.sigma2_hat)


def test_prior_limits(bench_parts, bench_model):
    n = bench_model.theta_bar.size
    wide = fit_arx_prior(bench_parts, 1e12, np.eye(n))
    np.testing.assert_allclose(wide.theta_bar, bench_model.theta_bar, rtol=1e-6)
    narrow = fit_arx_prior(bench_parts, 1e-12, np.eye(n))
    assert np.abs(narrow.theta_bar).max() < 1e-6 * np.abs(bench_model.theta_bar).max()


def test_prior_ridge_oracle():
    rng = np.random.default_rng(7)
    u = rng.standard_normal(40)
    y = signal.lfilter([0, 0.8], [1, -0.6], u) + 0.1 * rng.standard_normal(40)
    ds = Dataset(u, y)
    rho = 2
    parts = partition(ds, rho, 2)
    post = fit_arx_prior(parts, 1.0, np.eye(2 * rho), sigma2=0.3)
    X, Y = _unscaled_regressors(ds, rho)
    ridge = np.linalg.solve(X.T @ X + 0.3 * np.eye(2 * rho), X.T @ Y)
    np.testing.assert_allclose(post.theta_bar, ridge, rtol=1e-10)
    np.testing.assert_allclose(post.covariance(),
                               0.3 * np.linalg.inv(X.T @ X + 0.3 * np.eye(2 * rho)), rtol=1e-10)


def test_prior_rejects_bad_covariance(bench_parts):
    n = 12
    with pytest.raises(ValueError):
        fit_arx_prior(bench_parts, 1.0, -np.eye(n))
    bad = np.eye(n)
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        fit_arx_prior(bench_parts, 1.0, bad)


def test_residual_sigma2_noise_free_and_white():
    assert residual_sigma2(partition(_first_order(), 1, 2)) < 1e-16
    rng = np.random.default_rng(11)
    ds = Dataset(rng.standard_normal(100_001), rng.standard_normal(100_001))
    s2 = residual_sigma2(partition(ds, 1, 1))
    assert 0.99 <= s2 <= 1.01


def test_residual_sigma2_benchmark_band():
    plant = benchmark_plant()
    est = []
    for seed in range(20):
        ds = simulate_open_loop(plant, ExcitationSpec(), 250, seed)
        est.append(residual_sigma2(partition(ds, select_order_aic(ds, 20), 20)))
    assert abs(np.median(est) / SIGMA2 - 1) <= 0.25


def test_covariance_contracts_with_more_data():
    plant = benchmark_plant()
    ratios = []
    for seed in range(20):
        t1 = np.trace(fit_arx(partition(simulate_open_loop(plant, ExcitationSpec(), 250, seed), 6, 20)).S)
        t2 = np.trace(fit_arx(partition(simulate_open_loop(plant, ExcitationSpec(), 500, seed), 6, 20)).S)
        ratios.append(t2 / t1)
    assert 0.35 <= np.median(ratios) <= 0.65
    assert 0.35 <= np.mean(ratios) <= 0.65


def test_aic_single_candidate():
    assert select_order_aic(arx2_dataset(0, N=200), 1) == 1


def test_aic_never_underfits_arx2():
    picks = [select_order_aic(arx2_dataset(s), 4) for s in range(50)]
    assert min(picks) == 2
    assert np.bincount(picks).argmax() == 2


@pytest.mark.xfail(strict=True, reason="standard AIC overfits ARX(2) in about 20% of runs")
def test_aic_recovers_arx2_in_90_percent():
    picks = [select_order_aic(arx2_dataset(s), 4) for s in range(50)]
    assert np.mean(np.array(picks) == 2) >= 0.9


def test_aic_benchmark_orders_concentrated():
    plant = benchmark_plant()
    picks = [select_order_aic(simulate_open_loop(plant, ExcitationSpec(), 250, s), 20)
             for s in range(20)]
    q1, q3 = np.percentile(picks, [25, 75])
    assert q3 - q1 <= 6
    assert min(picks) >= 4
