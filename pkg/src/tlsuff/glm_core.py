"""Intercept-free binary and multinomial logistic regression by maximum likelihood.

Two objectives share one pair of optimizers:

* exact Newton with step-halving, used while the parameter count is below
  ``FitOptions.hessian_cap``;
* limited-memory BFGS preconditioned by the Kronecker approximation
  ``mean(W_i) (x) X'X`` of the information matrix, used above the cap.

Both maximize the log-likelihood (minus ``ridge * |w|^2 / 2`` when a ridge is
requested).  Parameters of the multinomial model are stored as a ``p x K``
matrix whose column ``k`` holds the coefficients of class ``k`` against the
base class 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.optimize import linprog

from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    MissingClass,
    NotConverged,
    SeparationDiverged,
)

__all__ = [
    "TargetDataset",
    "SourceDataset",
    "FitOptions",
    "FitDiagnostics",
    "SourceModel",
    "sigmoid",
    "log1pexp",
    "center_columns",
    "binary_loglik",
    "binary_gradient",
    "multinomial_loglik",
    "multinomial_gradient",
    "class_probabilities",
    "fit_binary_logistic",
    "fit_multinomial_logistic",
]

SEPARATION_NORM = 1e6
# Linear-predictor spread beyond which fitted probabilities are numerically 0/1.
SUSPICIOUS_SPREAD = 15.0
SATURATED_SPREAD = 30.0
# Largest LP (constraint-matrix nonzeros) used to confirm separation.
LP_NONZERO_CAP = 4_000_000


def _as_matrix(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatch(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


@dataclass(frozen=True)
class TargetDataset:
    """Target sample: ``n x p`` design and binary labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X)
        y = np.asarray(self.y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DimensionMismatch(
                f"y has shape {y.shape}, expected ({X.shape[0]},)"
            )
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("target labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SourceDataset:
    """Source sample: ``N x p`` design and labels in ``0..K``."""

    Xs: np.ndarray
    ys: np.ndarray
    K: int

    def __post_init__(self):
        X = _as_matrix(self.Xs, "Xs")
        y = np.asarray(self.ys)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DimensionMismatch(
                f"ys has shape {y.shape}, expected ({X.shape[0]},)"
            )
        if int(self.K) < 1:
            raise ValueError("K must be a positive integer")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("source labels must be integers")
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() > self.K:
            raise ValueError(f"source labels must lie in 0..{self.K}")
        object.__setattr__(self, "Xs", X)
        object.__setattr__(self, "ys", y)
        object.__setattr__(self, "K", int(self.K))

    @property
    def N(self) -> int:
        return self.Xs.shape[0]

    @property
    def p(self) -> int:
        return self.Xs.shape[1]

    def missing_classes(self):
        counts = np.bincount(self.ys, minlength=self.K + 1)
        return [k for k in range(self.K + 1) if counts[k] == 0]


@dataclass(frozen=True)
class FitOptions:
    grad_tol: float = 1e-8
    rel_tol: float = 1e-12
    max_iter: int = 200
    ridge: float = 0.0
    solver: str = "auto"  # "auto", "newton" or "lbfgs"
    hessian_cap: int = 2000
    history: int = 10
    max_halvings: int = 30
    chunk_rows: int = 4096

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.solver not in ("auto", "newton", "lbfgs"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.history < 1 or self.chunk_rows < 1:
            raise ValueError("history and chunk_rows must be positive")

    def choose_solver(self, n_params: int) -> str:
        if self.solver != "auto":
            return self.solver
        return "newton" if n_params <= self.hessian_cap else "lbfgs"


@dataclass(frozen=True)
class FitDiagnostics:
    """Outcome of one optimizer run.

    ``stop_reason`` is ``"gradient"`` when the gradient sup-norm fell below
    ``grad_tol`` and ``"loglik"`` when the relative log-likelihood change
    stalled below ``rel_tol``; only the former guarantees
    ``final_grad_norm <= grad_tol``.
    """

    iterations: int
    final_grad_norm: float
    final_loglik: float
    converged: bool
    stop_reason: str = "gradient"
    solver: str = "newton"
    loglik_path: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "final_loglik": self.final_loglik,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "solver": self.solver,
        }


@dataclass(frozen=True)
class SourceModel:
    """Estimated source coefficients ``B`` (``p x K``) with fit diagnostics."""

    B: np.ndarray
    diagnostics: FitDiagnostics | None = None
    n_samples: int | None = None

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        if B.ndim != 2:
            raise DimensionMismatch(f"B must be 2-D, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("B contains non-finite entries")
        object.__setattr__(self, "B", B)

    @property
    def p(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[1]


# --------------------------------------------------------------------------
# scalar helpers and likelihoods


def sigmoid(x):
    """Numerically stable logistic function, scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log1pexp(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def center_columns(X):
    """Return ``(X - column means, column means)``."""
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    return X - means, means


def _check_theta(X, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != X.shape[1]:
        raise DimensionMismatch(
            f"theta has shape {theta.shape}, expected ({X.shape[1]},)"
        )
    return theta


def binary_loglik(data: TargetDataset, theta) -> float:
    theta = _check_theta(data.X, theta)
    eta = data.X @ theta
    return float(np.sum(data.y * eta - log1pexp(eta)))


def binary_gradient(data: TargetDataset, theta):
    theta = _check_theta(data.X, theta)
    return data.X.T @ (data.y - sigmoid(data.X @ theta))


def _check_B(X, B, K=None):
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != X.shape[1] or (K is not None and B.shape[1] != K):
        raise DimensionMismatch(
            f"B has shape {B.shape}, expected ({X.shape[1]}, {K if K else 'K'})"
        )
    return B


def _softmax_with_base(E):
    """Class probabilities (K+1 columns) and log-normalizer for logits ``E``."""
    m = np.maximum(E.max(axis=1), 0.0)
    ex = np.exp(E - m[:, None])
    base = np.exp(-m)
    den = base + ex.sum(axis=1)
    P = np.column_stack([base / den, ex / den[:, None]])
    return P, m + np.log(den)


def class_probabilities(X, B):
    """``n x (K+1)`` softmax probabilities with the base-class logit fixed at 0."""
    X = np.asarray(X, dtype=np.float64)
    B = _check_B(X, B)
    return _softmax_with_base(X @ B)[0]


def multinomial_loglik(data: SourceDataset, B) -> float:
    B = _check_B(data.Xs, B, data.K)
    E = data.Xs @ B
    _, lse = _softmax_with_base(E)
    y = data.ys
    hit = y > 0
    return float(E[np.flatnonzero(hit), y[hit] - 1].sum() - lse.sum())


def multinomial_gradient(data: SourceDataset, B):
    B = _check_B(data.Xs, B, data.K)
    P, _ = _softmax_with_base(data.Xs @ B)
    R = -P[:, 1:]
    hit = data.ys > 0
    R[np.flatnonzero(hit), data.ys[hit] - 1] += 1.0
    return data.Xs.T @ R


# --------------------------------------------------------------------------
# objectives consumed by the optimizers


class _Objective:
    """Penalized log-likelihood over a flat parameter vector.

    Subclasses implement ``_accumulate`` (loglik, gradient, mean curvature,
    max linear-predictor spread) and ``_hessian`` (information matrix,
    i.e. minus the Hessian of the log-likelihood).
    """

    def __init__(self, X, ridge, chunk_rows):
        self.X = X
        self.ridge = float(ridge)
        self.chunk = int(chunk_rows)
        self._eig = None

    def _chunks(self):
        n = self.X.shape[0]
        for a in range(0, n, self.chunk):
            yield a, min(a + self.chunk, n)

    def evaluate(self, w):
        ll, g, curv, spread = self._accumulate(w)
        if self.ridge:
            ll -= 0.5 * self.ridge * float(w @ w)
            g = g - self.ridge * w
        return ll, g, curv, spread

    def information(self, w):
        H = self._hessian(w)
        if self.ridge:
            H[np.diag_indices_from(H)] += self.ridge
        return H

    def _gram_eig(self):
        # X'X from an evenly strided subsample, rescaled to the full sample.
        if self._eig is None:
            n, p = self.X.shape
            m = min(n, max(20 * p, 2000))
            stride = max(n // m, 1)
            Xs = self.X[::stride]
            S = (Xs.T @ Xs) * (n / Xs.shape[0])
            lam, Q = np.linalg.eigh(S)
            lam = np.maximum(lam, 1e-12 * max(lam.max(), 1e-300))
            self._eig = (lam, Q)
        return self._eig

    def precondition(self, g, curv):
        """Apply ``(curv (x) X'X + ridge I)^{-1}`` to a gradient-shaped vector."""
        lam, Q = self._gram_eig()
        p = self.X.shape[1]
        G = g.reshape(-1, p).T  # p x K
        mu, V = np.linalg.eigh(np.atleast_2d(curv))
        mu = np.maximum(mu, 1e-10 * max(mu.max(), 1e-300))
        core = (Q.T @ G @ V) / (np.outer(lam, mu) + self.ridge)
        return (Q @ core @ V.T).T.ravel()


class _BinaryObjective(_Objective):
    def __init__(self, X, y, ridge, chunk_rows):
        super().__init__(X, ridge, chunk_rows)
        self.y = y.astype(np.float64)
        self.n_params = X.shape[1]

    def _accumulate(self, w):
        ll = 0.0
        g = np.zeros_like(w)
        curv = 0.0
        spread = 0.0
        for a, b in self._chunks():
            Xc = self.X[a:b]
            eta = Xc @ w
            ll += float(np.sum(self.y[a:b] * eta - log1pexp(eta)))
            mu = sigmoid(eta)
            g += (self.y[a:b] - mu) @ Xc
            curv += float(np.sum(mu * (1.0 - mu)))
            if eta.size:
                spread = max(spread, float(np.abs(eta).max()))
        return ll, g, np.array([[curv / self.X.shape[0]]]), spread

    def _hessian(self, w):
        H = np.zeros((self.n_params, self.n_params))
        for a, b in self._chunks():
            Xc = self.X[a:b]
            mu = sigmoid(Xc @ w)
            H += (Xc * (mu * (1.0 - mu))[:, None]).T @ Xc
        return H

    def separable(self):
        s = 2.0 * self.y - 1.0
        A = self.X * s[:, None]
        return _lp_separable(sparse.csr_matrix(A))

    def lp_size(self):
        return self.X.size


class _MultinomialObjective(_Objective):
    def __init__(self, X, y, K, ridge, chunk_rows):
        super().__init__(X, ridge, chunk_rows)
        self.K = K
        self.y = y
        self.n_params = X.shape[1] * K
        self.onehot = np.zeros((X.shape[0], K))
        hit = y > 0
        self.onehot[np.flatnonzero(hit), y[hit] - 1] = 1.0

    def unflatten(self, w):
        return w.reshape(self.K, -1).T

    def _accumulate(self, w):
        B = self.unflatten(w)
        p, K = B.shape
        ll = 0.0
        G = np.zeros((K, p))  # R'X is much faster than X'R for thin R
        curv = np.zeros((K, K))
        spread = 0.0
        for a, b in self._chunks():
            Xc = self.X[a:b]
            Yc = self.onehot[a:b]
            E = (B.T @ Xc.T).T
            P, lse = _softmax_with_base(E)
            ll += float(np.sum(Yc * E) - lse.sum())
            Pk = P[:, 1:]
            G += (Yc - Pk).T @ Xc
            curv += np.diag(Pk.sum(axis=0)) - Pk.T @ Pk
            if E.size:
                hi = np.maximum(E.max(axis=1), 0.0)
                lo = np.minimum(E.min(axis=1), 0.0)
                spread = max(spread, float((hi - lo).max()))
        return ll, G.ravel(), curv / self.X.shape[0], spread

    def _hessian(self, w):
        B = self.unflatten(w)
        p, K = B.shape
        H = np.zeros((p * K, p * K))
        for a, b in self._chunks():
            Xc = self.X[a:b]
            Pk = _softmax_with_base(Xc @ B)[0][:, 1:]
            for k in range(K):
                for l in range(k, K):
                    wt = Pk[:, k] * ((k == l) - Pk[:, l])
                    blk = (Xc * wt[:, None]).T @ Xc
                    H[k * p:(k + 1) * p, l * p:(l + 1) * p] += blk
                    if l != k:
                        H[l * p:(l + 1) * p, k * p:(k + 1) * p] += blk.T
        return H

    def separable(self):
        # margin_(i,c) = x_i'(beta_{y_i} - beta_c) >= 0 for every c != y_i,
        # with beta_0 fixed at zero
        n, p = self.X.shape
        K = self.K
        ii, cc = np.nonzero(np.arange(K + 1)[None, :] != self.y[:, None])
        row = np.arange(ii.size)
        parts = []
        for sel, block, sign in (
            (self.y[ii] > 0, self.y[ii] - 1, 1.0),
            (cc > 0, cc - 1, -1.0),
        ):
            r, i, k = row[sel], ii[sel], block[sel]
            parts.append((
                np.repeat(r, p),
                (k[:, None] * p + np.arange(p)[None, :]).ravel(),
                sign * self.X[i].ravel(),
            ))
        rows, cols, vals = (np.concatenate(z) for z in zip(*parts))
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(ii.size, p * K))
        return _lp_separable(A)

    def lp_size(self):
        return 2 * self.X.size * self.K


def _lp_separable(A):
    """True when some direction makes every margin ``A d`` nonnegative and one positive."""
    m, d = A.shape
    c = -np.asarray(A.sum(axis=0)).ravel()
    res = linprog(
        c,
        A_ub=-A,
        b_ub=np.zeros(m),
        bounds=[(-1.0, 1.0)] * d,
        method="highs",
    )
    if res.status != 0:
        return False
    scale = float(abs(A).max()) if A.nnz else 1.0
    return -res.fun > 1e-7 * max(scale, 1.0) * max(m, 1) ** 0.5


# --------------------------------------------------------------------------
# optimizers


class _Trace:
    def __init__(self, solver):
        self.solver = solver
        self.path = []


def _diverged(w):
    return not np.all(np.isfinite(w)) or float(np.linalg.norm(w)) > SEPARATION_NORM


def _stop_check(g, ll, ll_prev, opts):
    if float(np.max(np.abs(g))) <= opts.grad_tol:
        return "gradient"
    if ll_prev is not None:
        if abs(ll - ll_prev) <= opts.rel_tol * max(abs(ll), 1e-300):
            return "loglik"
    return None


def _newton(obj, w, opts):
    tr = _Trace("newton")
    ll, g, _, spread = obj.evaluate(w)
    tr.path.append(ll)
    reason = _stop_check(g, ll, None, opts)
    it = 0
    while reason is None and it < opts.max_iter:
        it += 1
        H = obj.information(w)
        try:
            step = sla.cho_solve(sla.cho_factor(H, check_finite=True), g)
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            w_new = w + t * step
            if _diverged(w_new):
                raise SeparationDiverged(
                    "coefficient norm exceeded 1e6 or became non-finite"
                )
            ll_new, g_new, _, spread_new = obj.evaluate(w_new)
            if np.isfinite(ll_new) and ll_new >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            reason = "loglik"  # no ascent possible along the Newton direction
            break
        ll_prev = ll
        w, ll, g, spread = w_new, ll_new, g_new, spread_new
        tr.path.append(ll)
        reason = _stop_check(g, ll, ll_prev, opts)
    return w, ll, g, spread, it, reason, tr


def _lbfgs(obj, w, opts):
    tr = _Trace("lbfgs")
    ll, g, curv, spread = obj.evaluate(w)
    tr.path.append(ll)
    reason = _stop_check(g, ll, None, opts)
    hist = []
    it = 0
    while reason is None and it < opts.max_iter:
        it += 1
        d = _two_loop(obj, g, curv, hist)
        slope = float(g @ d)
        if not slope > 0:
            hist.clear()
            d = obj.precondition(g, curv)
            slope = float(g @ d)
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            w_new = w + t * d
            if _diverged(w_new):
                raise SeparationDiverged(
                    "coefficient norm exceeded 1e6 or became non-finite"
                )
            ll_new, g_new, curv_new, spread_new = obj.evaluate(w_new)
            if np.isfinite(ll_new) and ll_new >= ll + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if hist:
                hist.clear()
                continue
            reason = "loglik"
            break
        s = w_new - w
        yv = g - g_new  # gradient change of the negated objective
        sy = float(s @ yv)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            hist.append((s, yv, 1.0 / sy))
            if len(hist) > opts.history:
                hist.pop(0)
        ll_prev = ll
        w, ll, g, curv, spread = w_new, ll_new, g_new, curv_new, spread_new
        tr.path.append(ll)
        reason = _stop_check(g, ll, ll_prev, opts)
    return w, ll, g, spread, it, reason, tr


def _two_loop(obj, g, curv, hist):
    q = g.copy()
    alphas = []
    for s, yv, rho in reversed(hist):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * yv
    r = obj.precondition(q, curv)
    for (s, yv, rho), a in zip(hist, reversed(alphas)):
        b = rho * float(yv @ r)
        r += (a - b) * s
    return r


def _run(obj, opts):
    solver = opts.choose_solver(obj.n_params)
    w0 = np.zeros(obj.n_params)
    routine = _newton if solver == "newton" else _lbfgs
    w, ll, g, spread, it, reason, tr = routine(obj, w0, opts)

    if opts.ridge == 0.0 and spread > SUSPICIOUS_SPREAD:
        if obj.lp_size() <= LP_NONZERO_CAP:
            if obj.separable():
                raise SeparationDiverged(
                    "labels are separable; fitted probabilities reach 0 or 1"
                )
        elif spread > SATURATED_SPREAD:
            raise SeparationDiverged(
                "fitted probabilities numerically 0 or 1 (likely separation)"
            )
    gnorm = float(np.max(np.abs(g)))
    if reason is None:
        raise NotConverged(
            f"{solver} stopped after {it} iterations with gradient "
            f"sup-norm {gnorm:.3g} > {opts.grad_tol:g}"
        )
    diag = FitDiagnostics(
        iterations=it,
        final_grad_norm=gnorm,
        final_loglik=float(ll),
        converged=True,
        stop_reason=reason,
        solver=solver,
        loglik_path=tuple(tr.path),
    )
    return w, diag


def fit_binary_logistic(data: TargetDataset, opts: FitOptions | None = None):
    """Maximum-likelihood ``theta`` for the target model.

    Returns ``(theta, diagnostics)``.  Raises :class:`DegenerateLabels` when the
    labels are constant and :class:`SeparationDiverged` when the MLE does not
    exist.
    """
    opts = opts or FitOptions()
    if data.y.min() == data.y.max():
        raise DegenerateLabels(f"all {data.n} labels equal {int(data.y[0])}")
    obj = _BinaryObjective(data.X, data.y, opts.ridge, opts.chunk_rows)
    theta, diag = _run(obj, opts)
    return theta, diag


def fit_multinomial_logistic(data: SourceDataset, opts: FitOptions | None = None):
    """Maximum-likelihood source coefficients ``B`` (``p x K``)."""
    opts = opts or FitOptions()
    missing = data.missing_classes()
    if missing:
        raise MissingClass(missing)
    obj = _MultinomialObjective(data.Xs, data.ys, data.K, opts.ridge, opts.chunk_rows)
    w, diag = _run(obj, opts)
    return SourceModel(B=obj.unflatten(w).copy(), diagnostics=diag, n_samples=data.N)
