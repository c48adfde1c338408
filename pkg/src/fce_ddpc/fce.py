"""Final Control Error objective and controller.

For a fitted ARX posterior ``theta ~ (theta_bar, Sigma_theta)`` and the
weighted tracking loss

    L(u_f) = ||y_r - (Z(u_f)' (x) I_p) theta||_Q^2 + ||u_r - u_f||_R^2,

the conditional mean splits into the certainty-equivalence cost ``J`` plus
``r = Tr[Q M Sigma_theta M']`` with ``M = Z(u_f)' (x) I_p``. Both are
quadratic in ``u_f``; this module assembles them as ``1/2 u'Hu + g'u + c``.
``Q`` is frozen at ``What^{-T} Q_o What^{-1}`` using the posterior mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .arx import ArxModel
from .predictor import build_forms, regressor_map
from .qp import active_set_qp, box_rows, unconstrained_minimizer


@dataclass(frozen=True)
class ControlSpec:
    T: int
    Q_o: np.ndarray
    R: np.ndarray
    u_r: np.ndarray
    y_r: np.ndarray
    u_box: Optional[tuple] = None
    y_box: Optional[tuple] = None

    def __post_init__(self):
        for name in ("Q_o", "R", "u_r", "y_r"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        pT, mT = len(self.y_r), len(self.u_r)
        if self.Q_o.shape != (pT, pT) or self.R.shape != (mT, mT):
            raise ValueError("weights do not match reference dimensions")
        if pT % self.T or mT % self.T:
            raise ValueError("reference length is not a multiple of T")
        for name, M in (("Q_o", self.Q_o), ("R", self.R)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} is not positive definite")
        for name, box in (("u_box", self.u_box), ("y_box", self.y_box)):
            if box is not None:
                lo, hi = box
                if lo is not None and hi is not None and np.any(np.asarray(lo) > np.asarray(hi)):
                    raise ValueError(f"{name} is empty")

    @property
    def m(self) -> int:
        return len(self.u_r) // self.T

    @property
    def p(self) -> int:
        return len(self.y_r) // self.T

    @classmethod
    def tracking(cls, y_r, T: int, m: int = 1, q_o: float = 1.0, r: float = 5e-6,
                 u_r=None, **boxes) -> "ControlSpec":
        """Diagonal weights ``Q_o = q_o I``, ``R = r I``."""
        y_r = np.asarray(y_r, dtype=float).ravel()
        p = len(y_r) // T
        u_r = np.zeros(m * T) if u_r is None else np.asarray(u_r, dtype=float).ravel()
        return cls(T, q_o * np.eye(p * T), r * np.eye(m * T), u_r, y_r, **boxes)

    def with_reference(self, y_r, u_r=None) -> "ControlSpec":
        return ControlSpec(self.T, self.Q_o, self.R,
                           self.u_r if u_r is None else u_r, y_r,
                           self.u_box, self.y_box)


@dataclass(frozen=True)
class QuadraticObjective:
    """``FCE(u) = 1/2 u'Hu + g'u + c`` with its ``J`` and ``r`` parts."""

    H: np.ndarray
    g: np.ndarray
    c: float
    H_J: np.ndarray
    g_J: np.ndarray
    c_J: float
    H_r: np.ndarray
    g_r: np.ndarray
    c_r: float
    output_map: tuple = field(default=None)  # (F, f0): plug-in E[y_f | D] = F u + f0

    def value(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.g @ u + self.c)


def _block_traces(Q: np.ndarray, p: int) -> np.ndarray:
    T = Q.shape[0] // p
    return np.einsum("iaja->ij", Q.reshape(T, p, T, p))


class FCEProblem:
    """Model-dependent pieces of the FCE quadratic, reusable across steps."""

    def __init__(self, model: ArxModel, T: int, Q_o, R):
        self.model = model
        self.T = T
        m, p, rho = model.m, model.p, model.rho
        self.m, self.p, self.rho = m, p, rho
        self.Q_o = np.asarray(Q_o, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.form = build_forms(model, T)
        Winv = sla.solve_triangular(self.form.W, np.eye(p * T), lower=True, unit_diagonal=True)
        self.Winv = Winv
        self.Q = Winv.T @ self.Q_o @ Winv
        self.Q = 0.5 * (self.Q + self.Q.T)
        Pu = self.form.Phi_u
        self.H_J = 2.0 * (Pu.T @ self.Q @ Pu + self.R)
        # regressor selection is independent of z_ini and y_r
        _, self.G = regressor_map(np.zeros((m + p) * rho), np.zeros(p * T), rho, T, m)
        self.Omega = self._omega()
        self.OmegaG = self.Omega @ self.G
        self.H_r = 2.0 * self.G.T @ self.OmegaG
        self.H_r = 0.5 * (self.H_r + self.H_r.T)
        self.F = Winv @ Pu

    def _omega(self) -> np.ndarray:
        """Quadratic form with ``r = vec(Z)' Omega vec(Z)``."""
        model, p, T = self.model, self.p, self.T
        d = model.d
        if model.Sigma_theta is None:
            return model.sigma2_hat * np.kron(_block_traces(self.Q, p), model.S)
        Q4 = self.Q.reshape(T, p, T, p)
        S4 = model.Sigma_theta.reshape(d, p, d, p)
        Om = np.einsum("iajb,lamb->iljm", Q4, S4).reshape(T * d, T * d)
        return 0.5 * (Om + Om.T)

    def assemble(self, z_ini, y_r, u_r) -> QuadraticObjective:
        z_ini = np.asarray(z_ini, dtype=float)
        y_r = np.asarray(y_r, dtype=float)
        u_r = np.asarray(u_r, dtype=float)
        f = self.form
        d0 = y_r - f.Phi_y @ y_r - f.Phi_P @ z_ini
        Qd0 = self.Q @ d0
        g_J = -2.0 * (f.Phi_u.T @ Qd0 + self.R @ u_r)
        c_J = float(d0 @ Qd0 + u_r @ self.R @ u_r)
        z0, _ = regressor_map(z_ini, y_r, self.rho, self.T, self.m)
        g_r = 2.0 * self.OmegaG.T @ z0
        c_r = float(z0 @ self.Omega @ z0)
        f0 = self.Winv @ (f.Phi_P @ z_ini)
        return QuadraticObjective(
            H=self.H_J + self.H_r, g=g_J + g_r, c=c_J + c_r,
            H_J=self.H_J, g_J=g_J, c_J=c_J,
            H_r=self.H_r, g_r=g_r, c_r=c_r,
            output_map=(self.F, f0),
        )


def assemble_fce(model: ArxModel, spec: ControlSpec, z_ini) -> QuadraticObjective:
    if spec.m != model.m or spec.p != model.p:
        raise ValueError("control spec dimensions do not match the model")
    if len(z_ini) != model.d:
        raise ValueError(f"z_ini must have length {model.d}")
    return FCEProblem(model, spec.T, spec.Q_o, spec.R).assemble(z_ini, spec.y_r, spec.u_r)


def solve_qp(obj: QuadraticObjective, u_box=None, y_box=None, expected_output_map=None) -> np.ndarray:
    """Minimize the objective, optionally under input and expected-output boxes."""
    n = len(obj.g)
    if u_box is None and y_box is None:
        return unconstrained_minimizer(obj.H, obj.g)
    rows, rhs = [], []
    if u_box is not None:
        A, b = box_rows(u_box[0], u_box[1], n)
        rows.append(A)
        rhs.append(b)
    if y_box is not None:
        F, f0 = expected_output_map if expected_output_map is not None else obj.output_map
        A, b = box_rows(y_box[0], y_box[1], n, F, f0)
        rows.append(A)
        rhs.append(b)
    return active_set_qp(obj.H, obj.g, np.vstack(rows), np.concatenate(rhs)).u


def fce_components(obj: QuadraticObjective, u_f) -> dict:
    u = np.asarray(u_f, dtype=float)
    J = 0.5 * u @ obj.H_J @ u + obj.g_J @ u + obj.c_J
    r = 0.5 * u @ obj.H_r @ u + obj.g_r @ u + obj.c_r
    return {"J": float(J), "r": float(r)}


class FCEController:
    """Receding-horizon FCE controller; records the ``J``/``r`` split per step."""

    name = "fce"

    def __init__(self, model: ArxModel, spec: ControlSpec):
        self.model = model
        self.spec = spec
        self.problem = FCEProblem(model, spec.T, spec.Q_o, spec.R)
        self.components: list[dict] = []

    def __call__(self, ctx) -> np.ndarray:
        u_r = self.spec.u_r if ctx.u_r is None else ctx.u_r
        obj = self.problem.assemble(ctx.z_ini, ctx.y_r, u_r)
        u = solve_qp(obj, self.spec.u_box, self.spec.y_box)
        self.components.append(fce_components(obj, u))
        return u
