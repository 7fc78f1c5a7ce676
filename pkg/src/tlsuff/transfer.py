"""Transfer-learning estimator: features ``Z = X B`` and the working target fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .glm_core import (
    FitDiagnostics,
    FitOptions,
    SourceModel,
    TargetDataset,
    fit_binary_logistic,
    sigmoid,
)

__all__ = [
    "TransferFit",
    "make_features",
    "fit_transfer",
    "oracle_fit",
    "mse",
    "plugin_sigma",
]


@dataclass(frozen=True)
class TransferFit:
    gamma: np.ndarray
    theta: np.ndarray
    Z: np.ndarray
    B: np.ndarray
    diagnostics: FitDiagnostics

    def __post_init__(self):
        expected = self.B @ self.gamma
        if not np.allclose(self.theta, expected, rtol=0.0, atol=1e-12):
            raise ValueError("theta must equal B @ gamma")

    @property
    def fitted_probabilities(self):
        return sigmoid(self.Z @ self.gamma)


def make_features(B, X):
    """Row ``i`` of the result is ``B' x_i``."""
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if B.ndim != 2 or X.ndim != 2 or X.shape[1] != B.shape[0]:
        raise DimensionMismatch(
            f"cannot map X {X.shape} through B {B.shape}"
        )
    return X @ B


def _fit_on_features(B, data: TargetDataset, opts):
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != data.p:
        raise DimensionMismatch(
            f"coefficient matrix has shape {B.shape}, data has p={data.p}"
        )
    Z = make_features(B, data.X)
    gamma, diag = fit_binary_logistic(TargetDataset(Z, data.y), opts)
    return TransferFit(gamma=gamma, theta=B @ gamma, Z=Z, B=B, diagnostics=diag)


def fit_transfer(source: SourceModel, data: TargetDataset, opts: FitOptions | None = None):
    """Fit ``gamma`` on ``Z = X B_hat`` and return ``theta = B_hat gamma``."""
    return _fit_on_features(source.B, data, opts or FitOptions())


def oracle_fit(B_true, data: TargetDataset, opts: FitOptions | None = None):
    """Same construction with the true coefficient matrix (simulation only)."""
    return _fit_on_features(B_true, data, opts or FitOptions())


def mse(theta_hat, theta_true) -> float:
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    theta_true = np.asarray(theta_true, dtype=np.float64)
    if theta_hat.shape != theta_true.shape or theta_hat.ndim != 1:
        raise DimensionMismatch(
            f"shapes {theta_hat.shape} and {theta_true.shape} differ"
        )
    d = theta_hat - theta_true
    return float(d @ d) / d.size


def plugin_sigma(fit: TransferFit, v) -> float:
    """Plug-in ``sigma(v) = sqrt(v' B I(gamma)^{-1} B' v)``.

    ``I`` is the empirical Fisher information of the working model at
    ``gamma_hat``; the standard error of ``v' theta_hat`` is
    ``plugin_sigma(fit, v) / sqrt(n)``.  This is an extension: the asymptotic
    variance is stated for the true ``B`` and ``I``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (fit.B.shape[0],):
        raise DimensionMismatch(f"v must have length {fit.B.shape[0]}")
    mu = fit.fitted_probabilities
    Z = fit.Z
    info = (Z * (mu * (1.0 - mu))[:, None]).T @ Z / Z.shape[0]
    u = fit.B.T @ v
    return float(np.sqrt(u @ np.linalg.solve(info, u)))
