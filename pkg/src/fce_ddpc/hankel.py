"""Datasets and block-Hankel matrices.

Time indices follow the 1-based convention of the sample logs: ``signal(t)``
is row ``t - 1`` of the array. The joint process stacks outputs above inputs,
``z(t) = [y(t); u(t)]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InsufficientSamplesError(ValueError):
    """The requested Hankel window runs past the end of the log."""


class HorizonTooLongError(ValueError):
    """Not enough columns left for a full-rank past/future partition."""


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Dataset:
    """Open-loop input/output logs, one sample per row."""

    u_log: np.ndarray
    y_log: np.ndarray

    def __post_init__(self):
        u = np.array(self.u_log, dtype=float)
        y = np.array(self.y_log, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.shape[0] != y.shape[0]:
            raise ValueError(
                f"u_log has {u.shape[0]} rows but y_log has {y.shape[0]}")
        if u.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if u.shape[1] < 1 or y.shape[1] < 1:
            raise ValueError("m and p must be at least 1")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "u_log", u)
        object.__setattr__(self, "y_log", y)

    @property
    def m(self) -> int:
        return self.u_log.shape[1]

    @property
    def p(self) -> int:
        return self.y_log.shape[1]

    @property
    def N_data(self) -> int:
        return self.u_log.shape[0]

    @property
    def z_log(self) -> np.ndarray:
        """Joint samples ``z(t) = [y(t); u(t)]`` as rows."""
        return np.hstack([self.y_log, self.u_log])


@dataclass(frozen=True)
class HankelBlock:
    values: np.ndarray
    t0: int
    t1: int
    N: int
    scaled: bool

    @property
    def block_rows(self) -> int:
        return self.t1 - self.t0 + 1


@dataclass(frozen=True)
class PartitionedData:
    """Hankel matrices for the one-step ARX fit and for the LQ schemes.

    ``Z_arx``/``Y_next`` have ``N_arx = N_data - rho`` columns. ``Z_P``,
    ``U_F`` and ``Y_F`` share ``N_lq = N_data - rho - T + 1`` columns.
    All blocks are scaled by ``1/sqrt(N)``.
    """

    Z_arx: HankelBlock
    Y_next: HankelBlock
    Z_P: HankelBlock
    U_F: HankelBlock
    Y_F: HankelBlock
    rho: int
    T: int
    m: int
    p: int

    @property
    def N_arx(self) -> int:
        return self.Z_arx.N

    @property
    def N_lq(self) -> int:
        return self.Z_P.N


def build_hankel(signal, t0: int, t1: int, N: int, scaled: bool = True) -> HankelBlock:
    """Block-Hankel matrix of ``signal`` over rows ``t0..t1`` and ``N`` columns.

    Block ``(i, j)`` holds ``signal(t0 + i + j)``, divided by ``sqrt(N)`` when
    ``scaled``.

    Examples:
        >>> build_hankel([1.0, 2.0, 3.0], 1, 2, 2, scaled=False).values
        array([[1., 2.],
               [2., 3.]])
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if t0 < 1 or t1 < t0:
        raise ValueError(f"need 1 <= t0 <= t1, got t0={t0}, t1={t1}")
    if N < 1:
        raise ValueError("N must be positive")
    if t1 + N - 1 > x.shape[0]:
        raise InsufficientSamplesError(
            f"window [{t0}, {t1}] with N={N} needs {t1 + N - 1} samples, "
            f"log has {x.shape[0]}")
    rows = t1 - t0 + 1
    v = x.shape[1]
    # strided view: windows[j] = x[t0-1+j : t0-1+j+rows]
    windows = np.lib.stride_tricks.sliding_window_view(
        x[t0 - 1:t1 - 1 + N], rows, axis=0)  # (N, v, rows)
    H = np.transpose(windows, (2, 1, 0)).reshape(rows * v, N).copy()
    if scaled:
        H /= math.sqrt(N)
    H.setflags(write=False)
    return HankelBlock(H, t0, t1, N, scaled)


def partition(dataset: Dataset, rho: int, T: int, scaled: bool = True) -> PartitionedData:
    if rho < 1 or T < 1:
        raise ValueError("rho and T must be positive")
    n_data = dataset.N_data
    if n_data <= rho + T:
        raise HorizonTooLongError(
            f"N_data={n_data} must exceed rho + T = {rho + T}")
    m, p = dataset.m, dataset.p
    z = dataset.z_log
    n_arx = n_data - rho
    n_lq = n_data - rho - T + 1
    if n_lq < (m + p) * rho + m * T:
        raise HorizonTooLongError(
            f"only {n_lq} columns for {(m + p) * rho + m * T} rows of [Z_P; U_F]")
    return PartitionedData(
        Z_arx=build_hankel(z, 1, rho, n_arx, scaled),
        Y_next=build_hankel(dataset.y_log, rho + 1, rho + 1, n_arx, scaled),
        Z_P=build_hankel(z, 1, rho, n_lq, scaled),
        U_F=build_hankel(dataset.u_log, rho + 1, rho + T, n_lq, scaled),
        Y_F=build_hankel(dataset.y_log, rho + 1, rho + T, n_lq, scaled),
        rho=rho, T=T, m=m, p=p,
    )


def z_ini_from_logs(y_hist, u_hist, rho: int) -> np.ndarray:
    """Stack the last ``rho`` joint samples, oldest first."""
    y = np.asarray(y_hist, dtype=float)
    u = np.asarray(u_hist, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if u.ndim == 1:
        u = u[:, None]
    if y.shape[0] < rho or u.shape[0] < rho:
        raise InsufficientSamplesError(f"need {rho} past samples")
    return np.hstack([y[-rho:], u[-rho:]]).ravel()


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``m=..,p=..`` header then one row per sample, inputs first."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"m={dataset.m},p={dataset.p}\n")
        for u, y in zip(dataset.u_log, dataset.y_log):
            fh.write(",".join(f"{v:.17g}" for v in (*u, *y)) + "\n")


def load_dataset(path, format: str = "csv") -> Dataset:
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = {}
    try:
        for item in rows[0]:
            key, val = item.split("=")
            header[key.strip()] = int(val)
        m, p = header["m"], header["p"]
    except (ValueError, KeyError) as exc:
        raise DatasetFormatError(f"{path}: bad header {rows[0]!r}") from exc
    if m < 1 or p < 1:
        raise DatasetFormatError(f"{path}: empty channel group (m={m}, p={p})")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DatasetFormatError(f"{path}: no samples")
    for k, r in enumerate(body, start=2):
        if len(r) != m + p:
            raise DatasetFormatError(
                f"{path}:{k}: expected {m + p} fields, got {len(r)}")
    try:
        data = np.array(body, dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: non-numeric entry") from exc
    return Dataset(data[:, :m], data[:, m:])
