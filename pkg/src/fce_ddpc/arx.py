"""Truncated ARX predictor estimation.

Coefficients are stored in lag order, ``Theta = [phi_1 ... phi_rho]`` with
``phi_k = [phi_k^y, phi_k^u]``, and ``theta_bar = vec(Theta)`` (column-major).
The regressor for ``y(t)`` is ``[z(t-1); z(t-2); ...; z(t-rho)]``. Hankel
blocks stack the oldest sample first, so block order is reversed on entry.

The inverse Gram ``S`` and the residual energy are taken from *unscaled*
Hankel matrices, which makes ``sigma2_hat * kron(S, I_p)`` the posterior
covariance of ``theta`` at any sample size.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .hankel import Dataset, PartitionedData, build_hankel

GRAM_EPS = 1e-12


class SingularGramError(np.linalg.LinAlgError):
    """Regressor Gram matrix is numerically singular."""


@dataclass(frozen=True)
class ArxModel:
    rho: int
    theta_bar: np.ndarray
    S: np.ndarray
    sigma2_hat: float
    N: int
    m: int
    p: int
    Sigma_theta: Optional[np.ndarray] = None  # only set for informative priors

    @property
    def d(self) -> int:
        return (self.m + self.p) * self.rho

    @property
    def Theta(self) -> np.ndarray:
        """Coefficient matrix ``p x (m+p)rho``."""
        return self.theta_bar.reshape(self.d, self.p).T

    def phi(self, k: int) -> np.ndarray:
        """Lag-``k`` block ``[phi_k^y, phi_k^u]``, zero beyond ``rho``."""
        if k < 1:
            raise ValueError("lags start at 1")
        if k > self.rho:
            return np.zeros((self.p, self.m + self.p))
        w = self.m + self.p
        return self.Theta[:, (k - 1) * w:k * w]

    def covariance(self) -> np.ndarray:
        """Full posterior covariance of ``theta`` (materialized on request)."""
        if self.Sigma_theta is not None:
            return self.Sigma_theta
        return self.sigma2_hat * np.kron(self.S, np.eye(self.p))

    def with_sigma2(self, sigma2: float) -> "ArxModel":
        if self.Sigma_theta is not None:
            scale = sigma2 / self.sigma2_hat if self.sigma2_hat else 0.0
            cov = self.Sigma_theta * scale
        else:
            cov = None
        return ArxModel(self.rho, self.theta_bar, self.S, float(sigma2),
                        self.N, self.m, self.p, cov)

    def to_dict(self) -> dict:
        out = {
            "rho": self.rho,
            "theta_bar": self.theta_bar.tolist(),
            "S": self.S.tolist(),
            "sigma2_hat": self.sigma2_hat,
            "N": self.N,
            "m": self.m,
            "p": self.p,
        }
        if self.Sigma_theta is not None:
            out["Sigma_theta"] = self.Sigma_theta.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ArxModel":
        cov = d.get("Sigma_theta")
        return cls(
            rho=int(d["rho"]),
            theta_bar=np.asarray(d["theta_bar"], dtype=float),
            S=np.asarray(d["S"], dtype=float),
            sigma2_hat=float(d["sigma2_hat"]),
            N=int(d["N"]),
            m=int(d["m"]),
            p=int(d["p"]),
            Sigma_theta=None if cov is None else np.asarray(cov, dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ArxModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _lag_permutation(rho: int, w: int) -> np.ndarray:
    """Row indices taking oldest-first block order to lag order."""
    return np.concatenate([np.arange(w) + (rho - k) * w for k in range(1, rho + 1)])


def _unscaled(parts: PartitionedData):
    Z = parts.Z_arx.values
    Y = parts.Y_next.values
    if parts.Z_arx.scaled:
        s = math.sqrt(parts.Z_arx.N)
        Z, Y = Z * s, Y * s
    perm = _lag_permutation(parts.rho, parts.m + parts.p)
    return Z[perm], Y


def _ls_fit(Z: np.ndarray, Y: np.ndarray):
    """Least squares ``Y ~ Theta Z`` via QR of ``Z^T``.

    Returns ``Theta``, inverse Gram ``S`` and residual matrix.
    """
    d, N = Z.shape
    if N < d:
        raise SingularGramError(f"{N} samples for {d} regressors")
    Qf, R = np.linalg.qr(Z.T, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() == 0.0 or (diag.max() / diag.min()) ** 2 > 1.0 / GRAM_EPS:
        raise SingularGramError("regressor Gram matrix is numerically singular")
    Theta = sla.solve_triangular(R, Qf.T @ Y.T).T
    Rinv = sla.solve_triangular(R, np.eye(d))
    S = Rinv @ Rinv.T
    S = 0.5 * (S + S.T)
    resid = Y - Theta @ Z
    return Theta, S, resid


def _sigma2(resid: np.ndarray, d: int) -> float:
    p, N = resid.shape
    if N <= d:
        raise ValueError(f"residual variance undefined for N={N} <= d={d}")
    return float(np.sum(resid ** 2) / (p * (N - d)))


def fit_arx(parts: PartitionedData) -> ArxModel:
    """Non-informative-prior posterior of the truncated predictor."""
    Z, Y = _unscaled(parts)
    Theta, S, resid = _ls_fit(Z, Y)
    d = Z.shape[0]
    return ArxModel(
        rho=parts.rho,
        theta_bar=Theta.T.ravel().copy(),
        S=S,
        sigma2_hat=_sigma2(resid, d),
        N=Z.shape[1],
        m=parts.m,
        p=parts.p,
    )


def residual_sigma2(parts: PartitionedData, rho: Optional[int] = None) -> float:
    """Innovation variance from unscaled ARX residuals, ``RSS / (p (N - d))``."""
    if rho is not None and rho != parts.rho:
        raise ValueError(f"partition built for rho={parts.rho}, asked {rho}")
    Z, Y = _unscaled(parts)
    _, _, resid = _ls_fit(Z, Y)
    return _sigma2(resid, Z.shape[0])


def fit_arx_prior(parts: PartitionedData, lam: float, P,
                  sigma2: Optional[float] = None) -> ArxModel:
    """Gaussian posterior under ``theta ~ N(0, lam P)``.

    ``P`` is expressed in the ``vec(Theta)`` basis. When ``sigma2`` is not
    given the least-squares residual variance is plugged in.
    """
    if lam <= 0:
        raise ValueError("prior scale must be positive")
    Z, Y = _unscaled(parts)
    d, N = Z.shape
    p = parts.p
    P = np.asarray(P, dtype=float)
    if P.shape != (p * d, p * d):
        raise ValueError(f"prior covariance must be {p * d}x{p * d}")
    if not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("prior covariance is not symmetric")
    try:
        cP = sla.cho_factor(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError("prior covariance is not positive definite") from exc
    G = Z @ Z.T
    if sigma2 is None:
        _, _, resid = _ls_fit(Z, Y)
        sigma2 = _sigma2(resid, d)
    Pinv = sla.cho_solve(cP, np.eye(p * d))
    A = np.kron(G, np.eye(p)) + (sigma2 / lam) * Pinv
    A = 0.5 * (A + A.T)
    cA = sla.cho_factor(A)
    rhs = (Y @ Z.T).T.ravel()  # vec(Y Z^T)
    mean = sla.cho_solve(cA, rhs)
    cov = sigma2 * sla.cho_solve(cA, np.eye(p * d))
    cov = 0.5 * (cov + cov.T)
    try:
        S = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        S = np.linalg.pinv(G)
    return ArxModel(parts.rho, mean, S, float(sigma2), N, parts.m, p, cov)


def select_order_aic(dataset: Dataset, rho_max: int) -> int:
    """AIC choice of the truncation order on a common sample window.

    Every candidate predicts ``y(t)`` for ``t = rho_max+1 .. N_data``; the
    Gaussian log-likelihood uses the ML variance ``RSS / (p N)``.
    """
    if rho_max < 1:
        raise ValueError("rho_max must be at least 1")
    n_data = dataset.N_data
    if n_data <= rho_max + 1:
        raise ValueError(f"N_data={n_data} too short for rho_max={rho_max}")
    m, p = dataset.m, dataset.p
    w = m + p
    N = n_data - rho_max
    z = dataset.z_log
    Y = build_hankel(dataset.y_log, rho_max + 1, rho_max + 1, N, scaled=False).values
    best, best_aic = 1, math.inf
    for rho in range(1, rho_max + 1):
        Z = build_hankel(z, rho_max - rho + 1, rho_max, N, scaled=False).values
        Z = Z[_lag_permutation(rho, w)]
        _, _, resid = _ls_fit(Z, Y)
        s2 = float(np.sum(resid ** 2) / (p * N))
        aic = -math.inf if s2 <= 0 else N * p * math.log(s2) + 2 * p * w * rho
        if aic < best_aic:
            best, best_aic = rho, aic
    return best
