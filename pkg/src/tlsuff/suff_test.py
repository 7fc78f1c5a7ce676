"""Test of transfer-learning sufficiency.

Everything is computed from the pseudo-residuals ``r = y - g(Z gamma_hat)``
and the ``n x n`` Gram matrix ``G = X X'``; the ``p x p`` residual-weighted
second-moment matrix is never formed.

    T1 = r' G r / n^2
    tr_sigma = sum_i r_i^2 G_ii / n
    T2 = T1 - tr_sigma / n  =  n^-2 sum_{i != j} r_i r_j G_ij
    tr_sigma_sq = n^-2 sum_{i != j} r_i^2 r_j^2 G_ij^2
    T4 = T2 / sqrt(2 tr_sigma_sq / n^2)

The null is rejected when ``T4 > z_{1-alpha}`` (upper tail only).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import (
    CapExceeded,
    DegenerateVariance,
    DimensionMismatch,
    DomainError,
    TooFewSamples,
)
from .glm_core import FitOptions, SourceModel, TargetDataset, sigmoid
from .transfer import TransferFit, fit_transfer

__all__ = [
    "GRAM_CAP",
    "RECORD_FIELDS",
    "AsymptoticRegimeWarning",
    "GramMatrix",
    "SufficiencyResult",
    "pseudo_residuals",
    "gram",
    "statistic_T1",
    "trace_sigma_hat",
    "statistic_T2",
    "statistic_T2_offdiag",
    "trace_sigma_sq_hat",
    "statistic_T4",
    "normal_cdf",
    "normal_quantile",
    "statistics_from_fit",
    "test_sufficiency",
]

GRAM_CAP = 20_000
VARIANCE_FLOOR = 1e-300
RECORD_FIELDS = (
    "n", "p", "K", "T1", "T2", "trace_sigma", "trace_sigma_sq",
    "T4", "p_value", "alpha", "reject",
)


class AsymptoticRegimeWarning(UserWarning):
    """n^2 p / N is large, so the normal null approximation may be poor."""


@dataclass(frozen=True)
class GramMatrix:
    G: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def diag(self):
        return np.diagonal(self.G)


@dataclass(frozen=True)
class SufficiencyResult:
    n: int
    p: int
    K: int
    T1: float
    T2: float
    trace_sigma: float
    trace_sigma_sq: float
    T4: float
    p_value: float
    alpha: float
    reject: bool

    def to_record(self) -> dict:
        return {name: getattr(self, name) for name in RECORD_FIELDS}


def pseudo_residuals(Z, y, gamma):
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],) or gamma.shape != (Z.shape[1],):
        raise DimensionMismatch(
            f"Z {Z.shape}, y {y.shape}, gamma {gamma.shape} are inconsistent"
        )
    return y - sigmoid(Z @ gamma)


def gram(X, cap: int = GRAM_CAP) -> GramMatrix:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("X must be 2-D")
    if X.shape[0] > cap:
        raise CapExceeded(
            f"n={X.shape[0]} exceeds the Gram-matrix cap of {cap} rows"
        )
    G = X @ X.T
    # mirror the upper triangle so G is exactly symmetric
    upper = np.triu_indices(G.shape[0], 1)
    G.T[upper] = G[upper]
    return GramMatrix(G)


def _check(resid, G: GramMatrix):
    resid = np.asarray(resid, dtype=np.float64)
    if resid.shape != (G.n,):
        raise DimensionMismatch(
            f"residual vector of shape {resid.shape} vs Gram matrix of size {G.n}"
        )
    return resid


def statistic_T1(resid, G: GramMatrix) -> float:
    r = _check(resid, G)
    n = r.size
    return float(r @ (G.G @ r)) / n**2


def trace_sigma_hat(resid, G: GramMatrix) -> float:
    r = _check(resid, G)
    # same association as T1, so T2 vanishes exactly when n = 1
    return float(np.sum(r * (G.diag * r))) / r.size


def statistic_T2(T1: float, trace_sigma: float, n: int) -> float:
    if n < 1:
        raise DomainError("n must be at least 1")
    return T1 - trace_sigma / n


def statistic_T2_offdiag(resid, G: GramMatrix) -> float:
    """``T2`` evaluated directly as ``r'(G - diag G) r / n^2``."""
    r = _check(resid, G)
    off = G.G.copy()
    np.fill_diagonal(off, 0.0)
    return float(r @ off @ r) / r.size**2


def trace_sigma_sq_hat(resid, G: GramMatrix) -> float:
    r = _check(resid, G)
    n = r.size
    if n < 2:
        raise TooFewSamples("the squared-trace estimator needs n >= 2")
    w = r**2
    G2 = G.G**2
    np.fill_diagonal(G2, 0.0)
    return max(float(w @ G2 @ w), 0.0) / n**2


def statistic_T4(T2: float, trace_sigma_sq: float, n: int) -> float:
    if not trace_sigma_sq > VARIANCE_FLOOR:
        raise DegenerateVariance(
            f"estimated tr(Sigma^2) = {trace_sigma_sq!r} is not positive"
        )
    return T2 / math.sqrt(2.0 * trace_sigma_sq / n**2)


_STD_NORMAL = NormalDist()


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(q: float) -> float:
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q!r}")
    z = _STD_NORMAL.inv_cdf(q)
    # one Newton step on the cdf
    z -= (normal_cdf(z) - q) / (math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))
    return z


def statistics_from_fit(fit: TransferFit, data: TargetDataset, alpha: float,
                        G: GramMatrix | None = None) -> SufficiencyResult:
    """Run the statistic chain on an existing working-model fit."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    G = G if G is not None else gram(data.X)
    r = pseudo_residuals(fit.Z, data.y, fit.gamma)
    n = data.n
    T1 = statistic_T1(r, G)
    tr = trace_sigma_hat(r, G)
    T2 = statistic_T2(T1, tr, n)
    tr2 = trace_sigma_sq_hat(r, G)
    T4 = statistic_T4(T2, tr2, n)
    return SufficiencyResult(
        n=n,
        p=data.p,
        K=fit.Z.shape[1],
        T1=T1,
        T2=T2,
        trace_sigma=tr,
        trace_sigma_sq=tr2,
        T4=T4,
        p_value=1.0 - normal_cdf(T4),
        alpha=float(alpha),
        reject=bool(T4 > normal_quantile(1.0 - alpha)),
    )


def test_sufficiency(source: SourceModel, data: TargetDataset, alpha: float = 0.05,
                     opts: FitOptions | None = None) -> SufficiencyResult:
    """Fit the working model on ``X B_hat`` and test sufficiency at level ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if source.n_samples:
        ratio = data.n**2 * data.p / source.n_samples
        if ratio > 1.0:
            warnings.warn(
                f"n^2 p / N = {ratio:.3g} > 1; the normal null approximation "
                "relies on this ratio being small",
                AsymptoticRegimeWarning,
                stacklevel=2,
            )
    fit = fit_transfer(source, data, opts)
    return statistics_from_fit(fit, data, alpha)


test_sufficiency.__test__ = False  # keep pytest from collecting it
