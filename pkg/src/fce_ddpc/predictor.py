"""Multi-step predictors: ARX Toeplitz forms and the true-model oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .arx import ArxModel


class UnstableObserverError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorForm:
    """``W yhat_f = Phi_P z_ini + Phi_u u_f`` with ``W = I - Phi_y``."""

    Phi_y: np.ndarray
    Phi_u: np.ndarray
    Phi_P: np.ndarray
    W: np.ndarray
    rho: int
    T: int
    m: int
    p: int


@dataclass(frozen=True)
class RegressorMatrix:
    """Column ``i`` is the lag-ordered regressor for the output at ``t+i``."""

    Z: np.ndarray
    rho: int
    T: int


def build_forms(model: ArxModel, T: int) -> PredictorForm:
    if T < 1:
        raise ValueError("horizon must be positive")
    m, p, rho = model.m, model.p, model.rho
    Phi_y = np.zeros((p * T, p * T))
    Phi_u = np.zeros((p * T, m * T))
    Phi_P = np.zeros((p * T, (m + p) * rho))
    for i in range(T):
        for j in range(i):
            phi = model.phi(i - j)
            Phi_y[i * p:(i + 1) * p, j * p:(j + 1) * p] = phi[:, :p]
            Phi_u[i * p:(i + 1) * p, j * m:(j + 1) * m] = phi[:, p:]
        w = m + p
        for c in range(i, rho):
            Phi_P[i * p:(i + 1) * p, c * w:(c + 1) * w] = model.phi(i + rho - c)
    W = np.eye(p * T) - Phi_y
    return PredictorForm(Phi_y, Phi_u, Phi_P, W, rho, T, m, p)


def _dims(z_ini, u_f, y_r, rho, T):
    m = len(u_f) // T
    p = len(y_r) // T
    if m * T != len(u_f) or p * T != len(y_r) or len(z_ini) != (m + p) * rho:
        raise ValueError("inconsistent z_ini/u_f/y_r dimensions")
    return m, p


def regressor_map(z_ini, y_r, rho: int, T: int, m: int):
    """Affine map ``vec(Z) = z0 + G u_f`` (column-major ``vec``).

    ``G`` is a 0/1 selection matrix of shape ``((m+p) rho T, m T)``.
    """
    z_ini = np.asarray(z_ini, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    p = len(y_r) // T
    w = m + p
    d = w * rho
    z0 = np.zeros(d * T)
    G = np.zeros((d * T, m * T))
    zi = z_ini.reshape(rho, w)
    yr = y_r.reshape(T, p)
    for i in range(T):
        for k in range(1, rho + 1):
            row = i * d + (k - 1) * w
            s = i - k  # time offset from t
            if s >= 0:
                z0[row:row + p] = yr[s]
                G[row + p:row + w, s * m:(s + 1) * m] = np.eye(m)
            else:
                z0[row:row + w] = zi[rho + s]
    return z0, G


def build_regressors(z_ini, u_f, y_r, rho: int, T: int) -> RegressorMatrix:
    m, p = _dims(z_ini, u_f, y_r, rho, T)
    z0, G = regressor_map(z_ini, y_r, rho, T, m)
    vecZ = z0 + G @ np.asarray(u_f, dtype=float)
    return RegressorMatrix(vecZ.reshape(T, (m + p) * rho).T, rho, T)


def predict_multistep(form: PredictorForm, z_ini, u_f) -> np.ndarray:
    """``W^{-1}(Phi_P z_ini + Phi_u u_f)`` by forward substitution."""
    rhs = form.Phi_P @ np.asarray(z_ini, dtype=float) + form.Phi_u @ np.asarray(u_f, dtype=float)
    return sla.solve_triangular(form.W, rhs, lower=True, unit_diagonal=True)


@dataclass(frozen=True)
class PlantModel:
    """Innovation-form LTI plant ``x+ = Ax + Bu + Ke``, ``y = Cx + Du + e``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    sigma2: float

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "K"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("inconsistent plant dimensions")
        if self.D.shape != (self.p, self.m) or self.K.shape != (n, self.p):
            raise ValueError("inconsistent D or K shape")
        if self.sigma2 < 0:
            raise ValueError("negative noise variance")
        if self.observer_radius() >= 1.0:
            raise UnstableObserverError(
                f"spectral radius of A - KC is {self.observer_radius():.4f}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def observer_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A - self.K @ self.C))))

    def with_sigma2(self, sigma2: float) -> "PlantModel":
        return PlantModel(self.A, self.B, self.C, self.D, self.K, sigma2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "ABCDK"} | {"sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, d: dict) -> "PlantModel":
        return cls(d["A"], d["B"], d["C"], d["D"], d["K"], float(d["sigma2"]))


BENCHMARK_SIGMA2 = 4.81e-3


def benchmark_plant(sigma2: float = BENCHMARK_SIGMA2) -> PlantModel:
    """Fourth-order SISO benchmark (Landau et al. 1995) in innovation form."""
    A = [[1.4183, -1.5894, 1.3161, -0.8864],
         [1.0, 0.0, 0.0, 0.0],
         [0.0, 1.0, 0.0, 0.0],
         [0.0, 0.0, 1.0, 0.0]]
    B = [[1.0], [0.0], [0.0], [0.0]]
    C = [[0.0, 0.0, 0.2826, 0.5067]]
    D = [[0.0]]
    K = [[0.1784], [-0.6523], [0.2020], [2.2910]]
    return PlantModel(A, B, C, D, K, sigma2)


def observer_state(plant: PlantModel, y_hist, u_hist, x0=None) -> np.ndarray:
    """Run the innovation observer over the history; returns ``xhat(t)``.

    ``x0`` is the estimate at the first history sample (zeros by default).
    """
    y = np.asarray(y_hist, dtype=float).reshape(-1, plant.p)
    u = np.asarray(u_hist, dtype=float).reshape(-1, plant.m)
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    A, B, C, D, K = plant.A, plant.B, plant.C, plant.D, plant.K
    for yk, uk in zip(y, u):
        x = A @ x + B @ uk + K @ (yk - C @ x - D @ uk)
    return x


def prediction_matrices(plant: PlantModel, T: int):
    """``yhat_f = O xhat + Gamma u_f`` for the noise-free model."""
    n, m, p = plant.n, plant.m, plant.p
    O = np.zeros((p * T, n))
    Gamma = np.zeros((p * T, m * T))
    markov = [plant.D]  # impulse response blocks, h_0 = D
    Ak = np.eye(n)
    for h in range(T):
        O[h * p:(h + 1) * p] = plant.C @ Ak
        if h > 0:
            markov.append(plant.C @ np.linalg.matrix_power(plant.A, h - 1) @ plant.B)
        Ak = plant.A @ Ak
    for h in range(T):
        for j in range(h + 1):
            Gamma[h * p:(h + 1) * p, j * m:(j + 1) * m] = markov[h - j]
    return O, Gamma


def oracle_predict(plant: PlantModel, y_hist, u_hist, u_f, x0=None) -> np.ndarray:
    """Noise-free ``T``-step prediction from the observer state after the history."""
    u_f = np.asarray(u_f, dtype=float)
    T = len(u_f) // plant.m
    x = observer_state(plant, y_hist, u_hist, x0)
    O, Gamma = prediction_matrices(plant, T)
    return O @ x + Gamma @ u_f
