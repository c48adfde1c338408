import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fce_ddpc.hankel import (Dataset, DatasetFormatError, HorizonTooLongError,
                             InsufficientSamplesError, build_hankel, load_dataset,
                             partition, save_dataset, z_ini_from_logs)


def test_scalar_scaled_hankel():
    H = build_hankel([1.0, 2.0, 3.0], 1, 2, 2, scaled=True)
    np.testing.assert_allclose(H.values, np.array([[1, 2], [2, 3]]) / math.sqrt(2))
    assert H.scaled and H.N == 2 and H.block_rows == 2


def test_single_sample_column():
    x = np.array([[1.0, -2.0], [3.0, 4.0], [5.0, 6.0]])
    H = build_hankel(x, 2, 2, 1, scaled=False)
    np.testing.assert_array_equal(H.values, x[1][:, None])


def test_window_past_end_raises():
    with pytest.raises(InsufficientSamplesError):
        build_hankel(np.arange(5.0), 2, 3, 4)
    with pytest.raises(ValueError):
        build_hankel(np.arange(5.0), 0, 1, 2)


def test_partition_counts_on_benchmark(bench_data):
    parts = partition(bench_data, 3, 20)
    assert parts.Z_P.values.shape == (6, 228)
    assert parts.N_arx == 247 and parts.N_lq == 228
    assert parts.U_F.values.shape == (20, 228) and parts.Y_F.values.shape == (20, 228)
    assert parts.Z_arx.values.shape == (6, 247) and parts.Y_next.values.shape == (1, 247)
    assert np.linalg.matrix_rank(parts.Z_P.values) == 6


def test_partition_horizon_too_long():
    ds = Dataset(np.ones(23), np.ones(23))
    with pytest.raises(HorizonTooLongError):
        partition(ds, 3, 20)
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal(40), rng.standard_normal(40))
    with pytest.raises(HorizonTooLongError):
        partition(ds, 3, 20)  # 18 columns for 26 rows


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_hankel_shift_and_scaling(rows, v, N, seed):
    x = np.random.default_rng(seed).standard_normal((rows + N + 3, v))
    a = build_hankel(x, 1, rows, N, scaled=False).values
    b = build_hankel(x, 2, rows + 1, N, scaled=False).values
    np.testing.assert_array_equal(a[v:], b[:-v])
    s = build_hankel(x, 1, rows, N, scaled=True).values
    np.testing.assert_allclose(s, a / math.sqrt(N), rtol=1e-15)
    for i in range(rows):
        for j in range(N):
            np.testing.assert_array_equal(a[i * v:(i + 1) * v, j], x[i + j])


def test_partition_columns_stack_joint_samples():
    rng = np.random.default_rng(3)
    ds = Dataset(rng.standard_normal((60, 2)), rng.standard_normal((60, 1)))
    rho = 3
    parts = partition(ds, rho, 4, scaled=False)
    z = ds.z_log
    for j in (0, 7, parts.N_lq - 1):
        col = parts.Z_P.values[:, j]
        np.testing.assert_array_equal(col, z[j:j + rho].ravel())
        np.testing.assert_array_equal(parts.Y_F.values[:, j], ds.y_log[j + rho:j + rho + 4].ravel())
    # z(t) = [y(t); u(t)]
    np.testing.assert_array_equal(z[5], [ds.y_log[5, 0], *ds.u_log[5]])


def test_z_ini_matches_hankel_column():
    rng = np.random.default_rng(4)
    ds = Dataset(rng.standard_normal(50), rng.standard_normal(50))
    parts = partition(ds, 4, 5, scaled=False)
    j = 10
    zi = z_ini_from_logs(ds.y_log[:j + 4], ds.u_log[:j + 4], 4)
    np.testing.assert_array_equal(zi, parts.Z_P.values[:, j])


def test_dataset_roundtrip(tmp_path, bench_data):
    path = tmp_path / "d.csv"
    save_dataset(bench_data, path)
    back = load_dataset(path)
    assert (back.m, back.p, back.N_data) == (1, 1, 250)
    np.testing.assert_array_equal(back.u_log, bench_data.u_log)
    np.testing.assert_array_equal(back.y_log, bench_data.y_log)


def test_load_rejects_bad_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)
    p.write_text("m=1,p=1\n1,2\n3\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)
    p.write_text("m=0,p=1\n1\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)
    p.write_text("m=1,p=1\n1,abc\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones(3), np.ones(4))
    ds = Dataset(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        ds.u_log[0, 0] = 2.0
