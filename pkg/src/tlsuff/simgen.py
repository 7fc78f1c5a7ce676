"""Synthetic source/target data with AR(1)-correlated Gaussian features.

Randomness comes from counter-based Philox streams.  A stream is identified by
``(base_seed, *key)``; the key is hashed by :class:`numpy.random.SeedSequence`
into the Philox key, so streams with distinct keys are independent and each one
is reproducible in isolation, whatever order or process it is consumed in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .glm_core import SourceDataset, TargetDataset, sigmoid

__all__ = [
    "REFERENCE_GAMMA",
    "GenSpec",
    "GroundTruth",
    "default_gamma",
    "make_stream",
    "sample_ar1_rows",
    "gen_coefficients",
    "gen_source",
    "gen_target",
    "sigma_gamma_traces",
]

REFERENCE_GAMMA = (0.5, 0.5, 0.5, 0.5, 0.5, -1.25, 0.0, 0.0)


def default_gamma(K: int) -> np.ndarray:
    """The K=8 coefficient vector, truncated or zero-padded to length ``K``."""
    g = np.zeros(K)
    m = min(K, len(REFERENCE_GAMMA))
    g[:m] = REFERENCE_GAMMA[:m]
    return g


def make_stream(base_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GenSpec:
    p: int
    K: int = 8
    rho: float = 0.5
    gamma: tuple | None = None
    delta: float = 0.0
    base_seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.K < 1:
            raise ValueError("p and K must be positive")
        if not abs(self.rho) < 1:
            raise ValueError("rho must satisfy |rho| < 1")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        g = default_gamma(self.K) if self.gamma is None else np.asarray(self.gamma, float)
        if g.shape != (self.K,):
            raise ValueError(f"gamma must have length K={self.K}")
        object.__setattr__(self, "gamma", tuple(float(v) for v in g))

    @property
    def gamma_vec(self) -> np.ndarray:
        return np.asarray(self.gamma)


@dataclass(frozen=True)
class GroundTruth:
    B: np.ndarray
    theta: np.ndarray
    beta0_dir: np.ndarray
    gamma: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.gamma is not None and not np.allclose(
            self.theta, self.B @ self.gamma, rtol=0, atol=1e-12
        ):
            raise ValueError("theta must equal B @ gamma")


def sample_ar1_rows(count: int, p: int, rho: float, rng: np.random.Generator):
    """``count x p`` rows from N(0, Sigma) with ``Sigma_jk = rho^|j-k|``.

    Uses ``x_1 = z_1``, ``x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j``.
    """
    if not abs(rho) < 1:
        raise ValueError("rho must satisfy |rho| < 1")
    x = rng.standard_normal((p, count))  # one feature per row while recursing
    s = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[j] *= s
        x[j] += rho * x[j - 1]
    return np.ascontiguousarray(x.T)


def gen_coefficients(p: int, K: int, rng: np.random.Generator, gamma=None) -> GroundTruth:
    """Column ``k`` of ``B`` is ``u_k - u_0`` with ``u_k`` a random unit vector."""
    tilde = rng.standard_normal((K + 1, p))
    u = tilde / np.linalg.norm(tilde, axis=1, keepdims=True)
    B = (u[1:] - u[0]).T.copy()
    gamma = default_gamma(K) if gamma is None else np.asarray(gamma, dtype=np.float64)
    return GroundTruth(B=B, theta=B @ gamma, beta0_dir=u[0].copy(), gamma=gamma)


def gen_source(N: int, spec: GenSpec, truth: GroundTruth, rng: np.random.Generator):
    X = sample_ar1_rows(N, spec.p, spec.rho, rng)
    E = X @ truth.B
    m = np.maximum(E.max(axis=1), 0.0)
    P = np.column_stack([np.exp(-m), np.exp(E - m[:, None])])
    cum = np.cumsum(P, axis=1)
    cum /= cum[:, -1:]
    u = rng.random(N)
    # inverse cdf in class order; uniforms past the last cumulative go to class K
    y = np.minimum((u[:, None] >= cum).sum(axis=1), spec.K)
    return SourceDataset(X, y, spec.K)


def gen_target(n: int, spec: GenSpec, truth: GroundTruth, rng: np.random.Generator):
    X = sample_ar1_rows(n, spec.p, spec.rho, rng)
    u = rng.random(n)
    eta = X @ truth.B @ spec.gamma_vec + spec.delta * X[:, 0]
    y = (u < sigmoid(eta)).astype(np.int64)
    return TargetDataset(X, y)


def sigma_gamma_traces(spec: GenSpec, truth: GroundTruth, rng: np.random.Generator,
                       draws: int = 200_000, chunk: int = 20_000):
    """Monte Carlo ``(tr(Sigma_g), tr(Sigma_g^2))`` under the null model.

    ``Sigma_g = E[g(1-g)(z'gamma) x x']``; the squared trace uses the
    off-diagonal U-statistic so it carries no ``1/draws`` bias.
    """
    p = spec.p
    S = np.zeros((p, p))
    diag_sq = 0.0
    total = 0
    while total < draws:
        m = min(chunk, draws - total)
        X = sample_ar1_rows(m, p, spec.rho, rng)
        mu = sigmoid(X @ truth.B @ spec.gamma_vec)
        w = mu * (1.0 - mu)
        S += (X * w[:, None]).T @ X
        diag_sq += float(np.sum((w * np.einsum("ij,ij->i", X, X)) ** 2))
        total += m
    tr = float(np.trace(S)) / total
    tr_sq = (float(np.sum(S * S)) - diag_sq) / (total * (total - 1))
    return tr, tr_sq
