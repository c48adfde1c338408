"""Stochastic LTI simulation, references and closed-loop episodes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import signal

from .hankel import Dataset, z_ini_from_logs
from .predictor import PlantModel, prediction_matrices
from .qp import active_set_qp, box_rows, unconstrained_minimizer

OPEN_LOOP_BURN_IN = 200
CLOSED_LOOP_WARMUP = 50
BLOWUP = 1e6
PERIOD_OFFSET = 460


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExcitationSpec:
    """Second-order Butterworth low-pass filtered white noise."""

    cutoff: float = 1.8
    pre_filter_variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.cutoff < math.pi:
            raise ValueError("cutoff must lie in (0, pi) rad/sample")
        if self.pre_filter_variance < 0:
            raise ValueError("negative variance")

    def filter(self):
        return signal.butter(2, self.cutoff / math.pi)


def _excitation(rng, exc: ExcitationSpec, n: int, m: int) -> np.ndarray:
    white = rng.standard_normal((n, m)) * math.sqrt(exc.pre_filter_variance)
    b, a = exc.filter()
    return signal.lfilter(b, a, white, axis=0)


def _simulate(plant: PlantModel, u: np.ndarray, e: np.ndarray, x0=None):
    A, B, C, D, K = plant.A, plant.B, plant.C, plant.D, plant.K
    x = np.zeros(plant.n) if x0 is None else np.array(x0, dtype=float)
    y = np.empty((u.shape[0], plant.p))
    for k in range(u.shape[0]):
        y[k] = C @ x + D @ u[k] + e[k]
        x = A @ x + B @ u[k] + K @ e[k]
    return y, x


def _open_loop_signals(plant, exc, N_data, seed):
    rng = np.random.default_rng(exc.seed if seed is None else seed)
    total = N_data + OPEN_LOOP_BURN_IN
    u = _excitation(rng, exc, total, plant.m)
    e = rng.standard_normal((total, plant.p)) * math.sqrt(plant.sigma2)
    return u, e


def simulate_open_loop(plant: PlantModel, exc: ExcitationSpec, N_data: int,
                       seed: Optional[int] = None) -> Dataset:
    """Training data from ``x(0) = 0``; the first 200 samples are discarded."""
    if N_data < 1:
        raise ValueError("N_data must be positive")
    u, e = _open_loop_signals(plant, exc, N_data, seed)
    y, _ = _simulate(plant, u, e)
    return Dataset(u[OPEN_LOOP_BURN_IN:], y[OPEN_LOOP_BURN_IN:])


def measure_snr(plant: PlantModel, exc: ExcitationSpec, N_data: int,
                seed: Optional[int] = None) -> float:
    """SNR in dB from twin noise-free and noise-only simulations."""
    u, e = _open_loop_signals(plant, exc, N_data, seed)
    y_u, _ = _simulate(plant, u, np.zeros_like(e))
    y_e, _ = _simulate(plant, np.zeros_like(u), e)
    y_u, y_e = y_u[OPEN_LOOP_BURN_IN:], y_e[OPEN_LOOP_BURN_IN:]
    return float(10 * math.log10(np.var(y_u) / np.var(y_e)))


@dataclass(frozen=True)
class ReferenceSpec:
    kind: str = "square_wave"
    T_v: int = 500
    T: int = 20
    period: Optional[int] = None
    amplitude: float = 1.0
    levels: tuple = (0.0, 1.0, -0.5, 0.8, -1.0)
    switch_every: int = 100

    def __post_init__(self):
        if self.kind not in ("square_wave", "multilevel", "constant"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.T_v < 1:
            raise ValueError("T_v must be positive")


def make_reference(spec: ReferenceSpec) -> np.ndarray:
    """Reference of length ``T_v + T``; the lookahead tail holds the last value.

    ``square_wave`` uses period ``T_v - 460`` unless ``period`` is given and
    starts at ``+amplitude``. ``multilevel`` steps through ``levels`` every
    ``switch_every`` samples.
    """
    t = np.arange(spec.T_v)
    if spec.kind == "square_wave":
        period = spec.period
        if period is None:
            if spec.T_v <= PERIOD_OFFSET:
                raise ValueError(f"square wave period T_v - 460 needs T_v > 460, got {spec.T_v}")
            period = spec.T_v - PERIOD_OFFSET
        if period < 2:
            raise ValueError("square wave period must be at least 2")
        ref = np.where((t % period) < period / 2, 1.0, -1.0) * spec.amplitude
    elif spec.kind == "multilevel":
        idx = (t // spec.switch_every) % len(spec.levels)
        ref = np.asarray(spec.levels, dtype=float)[idx]
    else:
        ref = np.full(spec.T_v, float(spec.amplitude))
    return np.concatenate([ref, np.full(spec.T, ref[-1])])


@dataclass
class StepContext:
    """What a controller sees at time ``t``: past logs and the reference window."""

    t: int
    z_ini: np.ndarray
    y_r: np.ndarray
    u_r: Optional[np.ndarray]
    y_hist: np.ndarray
    u_hist: np.ndarray


@dataclass
class ClosedLoopResult:
    y_log: np.ndarray
    u_log: np.ndarray
    y_ref: np.ndarray
    J_a: float
    unstable: bool
    noise: np.ndarray = field(repr=False)
    r: float = 5e-6

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            p, m = self.y_log.shape[1], self.u_log.shape[1]
            w.writerow(["t"] + [f"y{i}" for i in range(p)] + [f"u{i}" for i in range(m)]
                       + [f"y_r{i}" for i in range(p)])
            for k in range(self.y_log.shape[0]):
                w.writerow([k] + [f"{v:.17g}" for v in (*self.y_log[k], *self.u_log[k],
                                                          *self.y_ref[k])])


def performance_index(y_log, u_log, y_ref, r: float) -> float:
    """Mean of ``||y - y_r||^2 + r ||u||^2`` over the episode."""
    y = np.asarray(y_log, dtype=float).reshape(len(y_log), -1)
    u = np.asarray(u_log, dtype=float).reshape(len(u_log), -1)
    yr = np.asarray(y_ref, dtype=float).reshape(len(y_ref), -1)
    if not (len(y) == len(u) == len(yr)):
        raise ValueError(f"length mismatch: y={len(y)}, u={len(u)}, y_r={len(yr)}")
    if len(y) == 0:
        raise ValueError("empty logs")
    return float(np.mean(np.sum((y - yr) ** 2, axis=1) + r * np.sum(u ** 2, axis=1)))


def closed_loop_noise(plant: PlantModel, T_v: int, seed: int,
                      warmup: int = CLOSED_LOOP_WARMUP,
                      exc: ExcitationSpec = ExcitationSpec()):
    """Innovation sequence and warmup excitation for one episode."""
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((warmup + T_v, plant.p)) * math.sqrt(plant.sigma2)
    u_warm = _excitation(rng, exc, warmup, plant.m)
    return e, u_warm


def run_closed_loop(plant: PlantModel, controller: Callable, reference, T_v: int,
                    rho: int, seed: int, T: Optional[int] = None, r: float = 5e-6,
                    warmup: int = CLOSED_LOOP_WARMUP,
                    exc: ExcitationSpec = ExcitationSpec()) -> ClosedLoopResult:
    """Receding-horizon episode: apply the first block of each ``u_f``.

    The plant starts at ``x = 0`` and is driven open loop for ``warmup``
    samples, which provide the first ``z_ini``. The noise stream depends only
    on ``seed``, so different controllers see identical disturbances.
    """
    if warmup < rho:
        raise ValueError(f"warmup of {warmup} samples cannot fill rho={rho}")
    ref = np.asarray(reference, dtype=float)
    p, m = plant.p, plant.m
    ref = ref.reshape(len(ref), -1) if ref.ndim > 1 else ref[:, None]
    if T is None:
        T = ref.shape[0] - T_v
    if T < 1:
        raise ValueError("reference must extend at least one step past T_v")
    if ref.shape[0] < T_v + T - 1:
        raise ValueError("reference shorter than T_v + T - 1")
    e, u_warm = closed_loop_noise(plant, T_v, seed, warmup, exc)
    A, B, C, D, K = plant.A, plant.B, plant.C, plant.D, plant.K
    total = warmup + T_v
    y = np.zeros((total, p))
    u = np.zeros((total, m))
    x = np.zeros(plant.n)
    for k in range(warmup):
        u[k] = u_warm[k]
        y[k] = C @ x + D @ u[k] + e[k]
        x = A @ x + B @ u[k] + K @ e[k]
    unstable = False
    end = total
    for t in range(T_v):
        k = warmup + t
        window = ref[t:t + T]
        if window.shape[0] < T:
            window = np.vstack([window, np.repeat(window[-1:], T - window.shape[0], axis=0)])
        ctx = StepContext(
            t=t,
            z_ini=z_ini_from_logs(y[:k], u[:k], rho),
            y_r=window.ravel(),
            u_r=None,
            y_hist=y[:k],
            u_hist=u[:k],
        )
        try:
            u_f = np.asarray(controller(ctx), dtype=float)
        except Exception as exc_:
            name = getattr(controller, "name", type(controller).__name__)
            raise ControllerError(f"controller {name!r} failed at t={t} (seed {seed})") from exc_
        u[k] = u_f[:m]
        y[k] = C @ x + D @ u[k] + e[k]
        x = A @ x + B @ u[k] + K @ e[k]
        if not np.all(np.isfinite(y[k])) or np.linalg.norm(y[k]) > BLOWUP:
            unstable = True
            end = k + 1
            break
    y_c, u_c = y[warmup:end], u[warmup:end]
    y_ref = ref[:T_v]
    J = math.inf if unstable else performance_index(y_c, u_c, y_ref, r)
    return ClosedLoopResult(y_c, u_c, y_ref[:len(y_c)], J, unstable, e, r)


class OracleMPCController:
    """Model predictive control with the true plant.

    The innovation observer starts from the plant's known initial state at the
    beginning of the episode, which makes the state estimate exact in
    innovation form.
    """

    name = "mpc_oracle"

    def __init__(self, plant: PlantModel, spec, x0=None):
        self.plant = plant
        self.spec = spec
        self.O, self.Gamma = prediction_matrices(plant, spec.T)
        G, Q, R = self.Gamma, spec.Q_o, spec.R
        self.H = 2.0 * (G.T @ Q @ G + R)
        self._GQ = G.T @ Q
        self._x0 = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float)
        self.reset()

    def reset(self):
        self._x = self._x0.copy()
        self._seen = 0

    def _advance(self, y_hist, u_hist):
        if len(y_hist) < self._seen:
            self.reset()
        P = self.plant
        for k in range(self._seen, len(y_hist)):
            yk, uk = y_hist[k], u_hist[k]
            self._x = P.A @ self._x + P.B @ uk + P.K @ (yk - P.C @ self._x - P.D @ uk)
        self._seen = len(y_hist)

    def __call__(self, ctx) -> np.ndarray:
        self._advance(ctx.y_hist, ctx.u_hist)
        u_r = self.spec.u_r if ctx.u_r is None else ctx.u_r
        g = -2.0 * (self._GQ @ (ctx.y_r - self.O @ self._x) + self.spec.R @ u_r)
        if self.spec.u_box is None and self.spec.y_box is None:
            return unconstrained_minimizer(self.H, g)
        rows, rhs = [], []
        n = len(g)
        if self.spec.u_box is not None:
            A_, b_ = box_rows(*self.spec.u_box, n)
            rows.append(A_)
            rhs.append(b_)
        if self.spec.y_box is not None:
            A_, b_ = box_rows(*self.spec.y_box, n, self.Gamma, self.O @ self._x)
            rows.append(A_)
            rhs.append(b_)
        return active_set_qp(self.H, g, np.vstack(rows), np.concatenate(rhs)).u
