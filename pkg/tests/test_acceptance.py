"""Acceptance criteria, each checked at its stated tolerance and time budget.

Every test records one PASS/FAIL line, echoed in the terminal summary.
Criteria 4 to 7 run desk-scale Monte Carlo experiments and take most of an
hour on one core; they carry the ``slow`` marker.
"""

import math
import time

import numpy as np
import pytest

from tlsuff.glm_core import FitOptions, TargetDataset, binary_gradient, binary_loglik, fit_binary_logistic, fit_multinomial_logistic, sigmoid
from tlsuff.mc_harness import ExperimentConfig, run_experiment
from tlsuff.simgen import GenSpec, gen_coefficients, gen_source, make_stream
from tlsuff.suff_test import gram, statistic_T1, statistic_T2, trace_sigma_hat, trace_sigma_sq_hat

SEED = 20240917


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- criterion 1

def _loop_oracle(X, r):
    n, p = X.shape
    G = [[sum(X[i, k] * X[j, k] for k in range(p)) for j in range(n)] for i in range(n)]
    T1 = sum(r[i] * r[j] * G[i][j] for i in range(n) for j in range(n)) / n**2
    tr = sum(r[i] ** 2 * G[i][i] for i in range(n)) / n
    T2 = sum(r[i] * r[j] * G[i][j] for i in range(n) for j in range(n) if i != j) / n**2
    tr2 = sum(r[i] ** 2 * r[j] ** 2 * G[i][j] ** 2
              for i in range(n) for j in range(n) if i != j) / n**2
    return T1, tr, T2, tr2


def test_criterion_1_algebraic_identities(acceptance_line):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n, p, K = rng.integers(2, 13), rng.integers(1, 7), rng.integers(1, 4)
        X = rng.standard_normal((n, p))
        Z = X @ rng.standard_normal((p, K))
        y = rng.integers(0, 2, n)
        r = y - sigmoid(Z @ rng.standard_normal(K))
        G = gram(X)
        T1 = statistic_T1(r, G)
        tr = trace_sigma_hat(r, G)
        got = (T1, tr, statistic_T2(T1, tr, n), trace_sigma_sq_hat(r, G))
        ref = _loop_oracle(X, r)
        # T2 is a difference of two terms of size T1, so it is scaled by them
        scales = (abs(ref[0]), abs(ref[1]), max(abs(ref[0]), abs(ref[1]) / n), abs(ref[3]))
        for a, b, s in zip(got, ref, scales):
            worst = max(worst, abs(a - b) / max(s, 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    acceptance_line("criterion 1", ok, f"max relative error {worst:.2e} (<= 1e-10), {elapsed:.2f}s (< 5s)")
    assert ok


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_mle_correctness(acceptance_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    X = rng.standard_normal((50, 2))
    y = (rng.random(50) < sigmoid(X @ np.array([0.8, -0.6]))).astype(int)
    data = TargetDataset(X, y)
    theta, _ = fit_binary_logistic(data, FitOptions())

    def f(a, b):
        eta = X[:, 0][:, None, None] * a + X[:, 1][:, None, None] * b
        return (y[:, None, None] * eta - np.logaddexp(0.0, eta)).sum(axis=0)

    c, half = np.zeros(2), 5.0
    for h in (0.05, 1e-3, 1e-4):
        ax0 = np.arange(c[0] - half, c[0] + half + h / 2, h)
        ax1 = np.arange(c[1] - half, c[1] + half + h / 2, h)
        A, Bm = np.meshgrid(ax0, ax1, indexing="ij")
        i, j = np.unravel_index(np.argmax(f(A, Bm)), A.shape)
        c, half = np.array([ax0[i], ax1[j]]), 5 * h
    grid_err = float(np.max(np.abs(theta - c)))

    h = 1e-6
    fd_err = 0.0
    for _ in range(10):
        th = rng.standard_normal(2) * 2
        g = binary_gradient(data, th)
        fd = np.array([(binary_loglik(data, th + h * e) - binary_loglik(data, th - h * e)) / (2 * h)
                       for e in np.eye(2)])
        fd_err = max(fd_err, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1.0)))
    elapsed = time.perf_counter() - t0
    ok = grid_err <= 1e-3 and fd_err <= 1e-4 and elapsed < 10
    acceptance_line("criterion 2", ok, f"grid gap {grid_err:.1e} (<= 1e-3), finite-difference "
                    f"error {fd_err:.1e} (<= 1e-4), {elapsed:.2f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------- criterion 3

@pytest.mark.slow
def test_criterion_3_source_consistency(acceptance_line):
    t0 = time.perf_counter()
    p, K = 10, 3
    spec = GenSpec(p=p, K=K)
    truth = gen_coefficients(p, K, make_stream(SEED, 9, 0))
    med = {}
    for N in (5_000, 50_000):
        errs = []
        for b in range(50):
            src = gen_source(N, spec, truth, make_stream(SEED, 9, 1, N, b))
            errs.append(np.linalg.norm(fit_multinomial_logistic(src).B - truth.B))
        med[N] = float(np.median(errs))
    ratio = med[5_000] / med[50_000]
    elapsed = time.perf_counter() - t0
    ok = 2.2 <= ratio <= 4.5 and elapsed < 300
    acceptance_line("criterion 3", ok, f"median error ratio {ratio:.3f} in [2.2, 4.5] "
                    f"({med[5_000]:.4f} -> {med[50_000]:.4f}), {elapsed:.0f}s (< 300s)")
    assert ok


# ---------------------------------------------------------------- criteria 4 and 5

@pytest.fixture(scope="module")
def size_run():
    cfg = ExperimentConfig("size", n=200, p=400, N=100_000, K=4, B_reps=500,
                           alpha=0.05, base_seed=SEED)
    return timed(run_experiment, cfg)


@pytest.mark.slow
def test_criterion_4_empirical_size(size_run, acceptance_line):
    res, elapsed = size_run
    agg = res.aggregates[0]
    ejp = agg["ejp"]
    ok = 0.02 <= ejp <= 0.09 and res.n_failed == 0 and elapsed < 1800
    acceptance_line("criterion 4", ok, f"EJP {ejp:.3f} in [0.02, 0.09] (oracle EJP "
                    f"{agg['ejp_oracle']:.3f}), {res.n_failed} failed fits, "
                    f"{elapsed / 60:.1f} min (< 30 min)")
    assert ok


@pytest.mark.slow
def test_criterion_5_null_shape(size_run, acceptance_line):
    res, _ = size_run
    t4 = np.array([r["T4"] for r in res.records if r["status"] == "ok"])
    mean, var = float(t4.mean()), float(t4.var(ddof=1))
    ok = -0.2 <= mean <= 0.2 and 0.7 <= var <= 1.3 and t4.size >= 500
    acceptance_line("criterion 5", ok, f"T4 mean {mean:+.3f} in [-0.2, 0.2], variance "
                    f"{var:.3f} in [0.7, 1.3], {t4.size} replications")
    assert ok


# ---------------------------------------------------------------- criterion 6

@pytest.mark.slow
def test_criterion_6_power_ordering(acceptance_line):
    t0 = time.perf_counter()
    ejp = {}
    for n in (200, 500):
        cfg = ExperimentConfig("power", n=n, p=400, N=100_000, K=4, B_reps=300,
                               delta_grid=(1.0, 3.0, 5.0), base_seed=SEED)
        for row in run_experiment(cfg).aggregates:
            ejp[n, row["delta"]] = row["ejp"]
    elapsed = time.perf_counter() - t0
    gain = ejp[500, 5.0] - ejp[500, 1.0]
    a, b = ejp[500, 3.0], ejp[200, 3.0]
    se = math.sqrt(a * (1 - a) / 300 + b * (1 - b) / 300)
    ok = gain >= 0.3 and a >= b - 2 * se and elapsed < 2700
    table = ", ".join(f"n={n} d={d:g}: {v:.3f}" for (n, d), v in sorted(ejp.items()))
    acceptance_line("criterion 6", ok, f"EJP(5)-EJP(1) at n=500 = {gain:.3f} (>= 0.3); "
                    f"EJP(3) n=500 {a:.3f} vs n=200 {b:.3f} (2 SE = {2 * se:.3f}); [{table}]; "
                    f"{elapsed / 60:.1f} min (< 45 min)")
    assert ok


# ---------------------------------------------------------------- criterion 7

@pytest.mark.slow
def test_criterion_7_estimator_ordering(acceptance_line):
    t0 = time.perf_counter()
    med = {}
    for N, est in ((20_000, ("transfer", "oracle")), (40_000, ("mle", "transfer", "oracle")),
                   (80_000, ("transfer", "oracle"))):
        cfg = ExperimentConfig("mse", n=400, p=40, N=N, K=4, B_reps=200,
                               estimators=est, base_seed=SEED)
        for row in run_experiment(cfg).aggregates:
            med[N, row["estimator"]] = row["median_log_mse"]
    elapsed = time.perf_counter() - t0
    mle, tl, orc = med[40_000, "mle"], med[40_000, "transfer"], med[40_000, "oracle"]
    gap = {N: med[N, "transfer"] - med[N, "oracle"] for N in (20_000, 80_000)}
    ok = mle > tl > orc - 0.05 and gap[80_000] < gap[20_000] and elapsed < 1200
    acceptance_line("criterion 7", ok, f"median log-MSE at N=40000: MLE {mle:.3f} > TL {tl:.3f} "
                    f"> oracle-0.05 {orc - 0.05:.3f}; TL-oracle gap {gap[20_000]:.4f} (N=20000) "
                    f"-> {gap[80_000]:.4f} (N=80000); {elapsed / 60:.1f} min (< 20 min)")
    assert ok


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_determinism_across_workers(tmp_path, acceptance_line):
    configs = [
        ExperimentConfig("size", n=50, p=30, N=8000, K=3, B_reps=6, base_seed=SEED, compute_T3=True,
                         trace_draws=10_000),
        ExperimentConfig("power", n=50, p=30, N=8000, K=3, B_reps=4, delta_grid=(1.0, 3.0),
                         base_seed=SEED),
        ExperimentConfig("mse", n=300, p=30, N=8000, K=3, B_reps=4, base_seed=SEED),
    ]
    same = True
    for cfg in configs:
        for workers in (1, 3):
            run_experiment(cfg, workers=workers).write(str(tmp_path / f"{cfg.kind}_{workers}"))
        for name in ("records.csv", "aggregates.csv", "summary.json"):
            a = (tmp_path / f"{cfg.kind}_1" / name).read_bytes()
            b = (tmp_path / f"{cfg.kind}_3" / name).read_bytes()
            same &= a == b
    acceptance_line("criterion 8", same, "size, power and mse outputs byte-identical "
                    "with 1 and 3 workers")
    assert same


def test_criterion_9_documented_non_requirement(acceptance_line):
    # real-data replication needs external pretrained networks; the CSV
    # fit-source/test workflow it would use is covered by the CLI tests
    acceptance_line("criterion 9", True, "not reproducible at desk scale by design; "
                    "CSV fit-source + test workflow covered in test_cli")
