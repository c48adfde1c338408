"""LQ-decomposition schemes: gamma-DDPC, DeePC and the VARX-bank identities.

With ``[Z_P; U_F; Y_F] = L Q`` (block lower-triangular ``L``, orthonormal
``Q``) every data combination ``alpha`` maps to ``gamma = Q alpha`` and

    z_ini = L11 g1,   u_f = L21 g1 + L22 g2,   y_f = L31 g1 + L32 g2 + L33 g3.

Infinite penalties are encoded by removing the corresponding block from the
problem rather than by large weights.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .fce import ControlSpec

RANK_TOL = 1e-12
FEASIBILITY_TOL = 1e-6


class RankDeficiencyWarning(UserWarning):
    pass


class SingularFactorError(np.linalg.LinAlgError):
    pass


class InfeasibleInitialConditionError(ValueError):
    pass


def _values(block):
    return getattr(block, "values", block)


@dataclass(frozen=True)
class LqFactors:
    L11: np.ndarray
    L21: np.ndarray
    L22: np.ndarray
    L31: np.ndarray
    L32: np.ndarray
    L33: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    N: int

    @property
    def L(self) -> np.ndarray:
        n1, n2, n3 = self.L11.shape[0], self.L22.shape[0], self.L33.shape[0]
        return np.block([
            [self.L11, np.zeros((n1, n2)), np.zeros((n1, n3))],
            [self.L21, self.L22, np.zeros((n2, n3))],
            [self.L31, self.L32, self.L33],
        ])

    @property
    def Q(self) -> np.ndarray:
        return np.vstack([self.Q1, self.Q2, self.Q3])

    @property
    def L_ZU(self) -> np.ndarray:
        n1, n2 = self.L11.shape[0], self.L22.shape[0]
        return np.block([[self.L11, np.zeros((n1, n2))], [self.L21, self.L22]])


@dataclass(frozen=True)
class GammaConfig:
    """Penalties on ``||g2||^2`` and ``||g3||^2``; the default is certainty equivalence."""

    beta2: float = 0.0
    beta3: float = math.inf

    def __post_init__(self):
        if self.beta2 < 0 or self.beta3 < 0:
            raise ValueError("penalties must be nonnegative")


@dataclass(frozen=True)
class DeePcConfig:
    lambda1: float = math.inf
    lambda2: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or math.isinf(self.lambda2):
            raise ValueError("need lambda1 in [0, inf], lambda2 in [0, inf)")


def lq_decompose(Z_P, U_F, Y_F) -> LqFactors:
    Zp, Uf, Yf = (np.asarray(_values(b), dtype=float) for b in (Z_P, U_F, Y_F))
    H = np.vstack([Zp, Uf, Yf])
    rows, N = H.shape
    if N < rows:
        raise ValueError(f"stacked Hankel has {rows} rows but only {N} columns")
    Qt, R = np.linalg.qr(H.T, mode="reduced")
    L = R.T
    Q = Qt.T
    sign = np.where(np.diag(L) < 0, -1.0, 1.0)
    L = L * sign
    Q = Q * sign[:, None]
    if np.abs(np.diag(L)).min() < RANK_TOL:
        warnings.warn("stacked Hankel matrix is numerically rank deficient",
                      RankDeficiencyWarning, stacklevel=2)
    n1, n2 = Zp.shape[0], Uf.shape[0]
    a, b = n1, n1 + n2
    return LqFactors(
        L11=L[:a, :a], L21=L[a:b, :a], L22=L[a:b, a:b],
        L31=L[b:, :a], L32=L[b:, a:b], L33=L[b:, b:],
        Q1=Q[:a], Q2=Q[a:b], Q3=Q[b:], N=N,
    )


def _solve_lower(L, rhs, what="L11"):
    d = np.abs(np.diag(L))
    if d.min() < RANK_TOL * max(1.0, d.max()):
        raise SingularFactorError(f"{what} is singular")
    return sla.solve_triangular(L, rhs, lower=True)


def _spd_solve(H, rhs):
    try:
        c = sla.cho_factor(H)
        return sla.cho_solve(c, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(H, rcond=1e-12, hermitian=True) @ rhs


@dataclass(frozen=True)
class LinearGains:
    """``u_f = Kz z_ini + Ky y_r + Ku u_r``."""

    Kz: np.ndarray
    Ky: np.ndarray
    Ku: np.ndarray

    def apply(self, z_ini, y_r, u_r) -> np.ndarray:
        return self.Kz @ z_ini + self.Ky @ y_r + self.Ku @ u_r


def gamma_gains(f: LqFactors, Q_o, R, cfg: GammaConfig) -> LinearGains:
    Q_o = np.asarray(Q_o, dtype=float)
    R = np.asarray(R, dtype=float)
    n1, n2, n3 = f.L11.shape[0], f.L22.shape[0], f.L33.shape[0]
    L11inv = _solve_lower(f.L11, np.eye(n1))
    free2 = not math.isinf(cfg.beta2)
    free3 = not math.isinf(cfg.beta3)
    Ay_blocks, Au_blocks, reg = [], [], []
    if free2:
        Ay_blocks.append(f.L32)
        Au_blocks.append(f.L22)
        reg.append(np.full(n2, cfg.beta2))
    if free3:
        Ay_blocks.append(f.L33)
        Au_blocks.append(np.zeros((n2, n3)))
        reg.append(np.full(n3, cfg.beta3))
    # u_f = L21 g1 + L22 g2, g1 = L11^{-1} z_ini
    Kz = f.L21 @ L11inv
    Ky = np.zeros((n2, n3))
    Ku = np.zeros((n2, n2))
    if not Ay_blocks:
        return LinearGains(Kz, Ky, Ku)
    Ay = np.hstack(Ay_blocks)
    Au = np.hstack(Au_blocks)
    Hx = Ay.T @ Q_o @ Ay + Au.T @ R @ Au + np.diag(np.concatenate(reg))
    Hx = 0.5 * (Hx + Hx.T)
    # x = Hx^{-1} [Ay'Q_o (y_r - L31 g1) + Au'R (u_r - L21 g1)]
    By = Ay.T @ Q_o
    Bu = Au.T @ R
    Bz = -(By @ f.L31 + Bu @ f.L21) @ L11inv
    X = _spd_solve(Hx, np.hstack([Bz, By, Bu]))
    Xz, Xy, Xu = X[:, :n1], X[:, n1:n1 + n3], X[:, n1 + n3:]
    if free2:
        sel = f.L22  # g2 occupies the first n2 entries of x
        Kz = Kz + sel @ Xz[:n2]
        Ky = sel @ Xy[:n2]
        Ku = sel @ Xu[:n2]
    return LinearGains(Kz, Ky, Ku)


def gamma_solve(f: LqFactors, z_ini, spec: ControlSpec, cfg: GammaConfig) -> np.ndarray:
    gains = gamma_gains(f, spec.Q_o, spec.R, cfg)
    return gains.apply(np.asarray(z_ini, dtype=float), spec.y_r, spec.u_r)


def sigma_from_l33(f: LqFactors, p: int) -> float:
    """Noise standard deviation estimate ``Tr(L33) / (pT)``."""
    return float(np.trace(f.L33) / f.L33.shape[0])


def thm3_config(f: LqFactors, Q_o, p: int = 1) -> GammaConfig:
    """Tuning-free penalties for the output-error limit: ``beta3 = inf``,
    ``beta2 = sigma_hat^2 Tr(Q_o) / N``."""
    s = sigma_from_l33(f, p)
    return GammaConfig(beta2=s * s * float(np.trace(Q_o)) / f.N, beta3=math.inf)


def thm3_solve(f: LqFactors, z_ini, spec: ControlSpec) -> np.ndarray:
    return gamma_solve(f, z_ini, spec, thm3_config(f, spec.Q_o, spec.p))


def deepc_as_gamma(cfg: DeePcConfig) -> GammaConfig:
    """Penalties of the equivalent gamma problem.

    Writing ``alpha = Q1'g1 + Q2'g2 + Q3'g3 + Q4'g4`` gives
    ``||(I - Pi) alpha||^2 = ||g3||^2 + ||g4||^2`` and
    ``||alpha||^2 = sum ||g_i||^2``; ``g4`` never reaches the outputs and is
    zero at the optimum, and ``||g1||^2`` is fixed by ``z_ini``.
    """
    beta3 = math.inf if math.isinf(cfg.lambda1) else cfg.lambda1 + cfg.lambda2
    return GammaConfig(beta2=cfg.lambda2, beta3=beta3)


def _check_initial_condition(f: LqFactors, z_ini):
    g1 = np.linalg.lstsq(f.L11, z_ini, rcond=None)[0]
    resid = np.linalg.norm(f.L11 @ g1 - z_ini)
    if resid > FEASIBILITY_TOL * max(1.0, np.linalg.norm(z_ini)):
        raise InfeasibleInitialConditionError(
            f"z_ini is outside the row space of Z_P (residual {resid:.3g})")


def deepc_solve(Z_P, U_F, Y_F, z_ini, spec: ControlSpec, cfg: DeePcConfig,
                factors: LqFactors | None = None) -> np.ndarray:
    """DeePC with consistency regularizer, solved through the LQ factors."""
    f = lq_decompose(Z_P, U_F, Y_F) if factors is None else factors
    z_ini = np.asarray(z_ini, dtype=float)
    _check_initial_condition(f, z_ini)
    return gamma_solve(f, z_ini, spec, deepc_as_gamma(cfg))


@dataclass(frozen=True)
class VarxBank:
    Phi_P: np.ndarray
    Phi_u: np.ndarray
    Phi_y: np.ndarray
    W_hat: np.ndarray
    D33: np.ndarray
    residuals: np.ndarray  # Y_F - Phi_P Z_P - Phi_u U_F - Phi_y Y_F


def varx_bank_fit(Z_P, U_F, Y_F, p: int = 1, factors: LqFactors | None = None) -> VarxBank:
    """Row-wise least-squares VARX models ``Y_{rho+i} ~ [Z_P; U_F; Y_{rho+1..rho+i-1}]``.

    ``D33`` is the block diagonal of ``L33`` (``p x p`` blocks).
    """
    Zp, Uf, Yf = (np.asarray(_values(b), dtype=float) for b in (Z_P, U_F, Y_F))
    n1, n2, n3 = Zp.shape[0], Uf.shape[0], Yf.shape[0]
    T = n3 // p
    Phi_P = np.zeros((n3, n1))
    Phi_u = np.zeros((n3, n2))
    Phi_y = np.zeros((n3, n3))
    for i in range(T):
        Zi = np.vstack([Zp, Uf, Yf[:i * p]])
        Yi = Yf[i * p:(i + 1) * p]
        Qi, Ri = np.linalg.qr(Zi.T, mode="reduced")
        d = np.abs(np.diag(Ri))
        if d.min() < RANK_TOL * max(1.0, d.max()):
            raise SingularFactorError(f"VARX regressor {i + 1} is rank deficient")
        Phi_i = sla.solve_triangular(Ri, Qi.T @ Yi.T).T
        rows = slice(i * p, (i + 1) * p)
        Phi_P[rows] = Phi_i[:, :n1]
        Phi_u[rows] = Phi_i[:, n1:n1 + n2]
        Phi_y[rows, :i * p] = Phi_i[:, n1 + n2:]
    W_hat = np.eye(n3) - Phi_y
    f = lq_decompose(Zp, Uf, Yf) if factors is None else factors
    D33 = np.zeros((n3, n3))
    for i in range(T):
        s = slice(i * p, (i + 1) * p)
        D33[s, s] = f.L33[s, s]
    resid = Yf - Phi_P @ Zp - Phi_u @ Uf - Phi_y @ Yf
    return VarxBank(Phi_P, Phi_u, Phi_y, W_hat, D33, resid)


def lq_varx_identity_errors(f: LqFactors, bank: VarxBank) -> dict:
    """Relative Frobenius errors of the four LQ/VARX identities."""
    Winv = sla.solve_triangular(bank.W_hat, np.eye(bank.W_hat.shape[0]),
                                lower=True, unit_diagonal=True)

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))

    return {
        "L31": rel(f.L31, Winv @ bank.Phi_P @ f.L11 + Winv @ bank.Phi_u @ f.L21),
        "L32": rel(f.L32, Winv @ bank.Phi_u @ f.L22),
        "L33": rel(f.L33, Winv @ bank.D33),
        "D33Q3": rel(bank.D33 @ f.Q3, bank.residuals),
    }


class GammaController:
    """Receding-horizon gamma-DDPC with precomputed linear gains."""

    def __init__(self, factors: LqFactors, spec: ControlSpec, cfg: GammaConfig, name="gamma"):
        self.cfg = cfg
        self.spec = spec
        self.name = name
        self.gains = gamma_gains(factors, spec.Q_o, spec.R, cfg)

    def __call__(self, ctx) -> np.ndarray:
        u_r = self.spec.u_r if ctx.u_r is None else ctx.u_r
        return self.gains.apply(ctx.z_ini, ctx.y_r, u_r)


class DeePCController(GammaController):
    def __init__(self, factors: LqFactors, spec: ControlSpec, cfg: DeePcConfig, name="deepc"):
        super().__init__(factors, spec, deepc_as_gamma(cfg), name)
        self.deepc_cfg = cfg
