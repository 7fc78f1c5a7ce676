"""Seeded Monte Carlo experiments: estimation error, empirical size and power.

Each replication ``b`` draws its source sample from stream
``(base_seed, experiment, 1, b)`` and its target sample from
``(base_seed, experiment, 2, b)``; the ground-truth coefficients come from
``(base_seed, experiment, 0)`` and are shared by every replication of an
experiment.  Replications therefore never share random state and their
records do not depend on how they are scheduled across workers.  Power
experiments reuse one source fit and one target design per replication for
every ``delta`` in the grid (common random numbers).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ExperimentFailed, NumericalError
from .glm_core import FitOptions, fit_binary_logistic, fit_multinomial_logistic
from .simgen import (
    GenSpec,
    gen_coefficients,
    gen_source,
    gen_target,
    make_stream,
    sigma_gamma_traces,
)
from .suff_test import gram, statistics_from_fit
from .transfer import fit_transfer, mse, oracle_fit

log = logging.getLogger(__name__)

__all__ = [
    "EXPERIMENT_IDS",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "run_mse",
    "run_size",
    "run_power",
    "published_grid",
    "atomic_write_text",
]

EXPERIMENT_IDS = {"mse": 1, "size": 2, "power": 3}
ESTIMATORS = ("mle", "transfer", "oracle")
_TRUTH, _SOURCE, _TARGET, _TRACE = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n: int
    p: int
    N: int
    K: int = 8
    B_reps: int = 100
    alpha: float = 0.05
    delta_grid: tuple = ()
    estimators: tuple = ("mle", "transfer", "oracle")
    base_seed: int = 0
    rho: float = 0.5
    gamma: tuple | None = None
    fit: FitOptions = field(default_factory=FitOptions)
    # Source fits default to the preconditioned quasi-Newton solver; exact
    # Newton at N ~ 1e5, pK ~ 1e3 costs tens of seconds per replication.
    source_solver: str = "lbfgs"
    compute_T3: bool = False
    trace_draws: int = 200_000
    max_fail_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_IDS:
            raise ConfigError("kind", f"must be one of {sorted(EXPERIMENT_IDS)}, got {self.kind!r}")
        for name in ("n", "p", "N", "K"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.B_reps < 1:
            raise ConfigError("B_reps", "must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not abs(self.rho) < 1:
            raise ConfigError("rho", "must satisfy |rho| < 1")
        if self.N < self.K + 1:
            raise ConfigError("N", "must be at least K + 1")
        if self.K >= self.n:
            raise ConfigError("K", "must be smaller than the target sample size n")
        if self.gamma is not None and len(self.gamma) != self.K:
            raise ConfigError("gamma", f"must have length K={self.K}")
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.kind == "power":
            if not self.delta_grid:
                raise ConfigError("delta_grid", "must be nonempty for power experiments")
            if any(d <= 0 for d in self.delta_grid):
                raise ConfigError("delta_grid", "values must be positive")
        if self.kind == "mse":
            if not self.estimators:
                raise ConfigError("estimators", "must name at least one estimator")
            bad = [e for e in self.estimators if e not in ESTIMATORS]
            if bad:
                raise ConfigError("estimators", f"unknown estimator(s) {bad}")
            if "mle" in self.estimators and self.p >= self.n:
                raise ConfigError(
                    "estimators", f"mle requires p < n (got p={self.p}, n={self.n})"
                )
        if self.source_solver not in ("auto", "newton", "lbfgs"):
            raise ConfigError("source_solver", f"unknown solver {self.source_solver!r}")
        if not 0.0 <= self.max_fail_fraction <= 1.0:
            raise ConfigError("max_fail_fraction", "must lie in [0, 1]")

    @property
    def experiment_id(self) -> int:
        return EXPERIMENT_IDS[self.kind]

    def gen_spec(self, delta: float = 0.0) -> GenSpec:
        return GenSpec(p=self.p, K=self.K, rho=self.rho, gamma=self.gamma,
                       delta=delta, base_seed=self.base_seed)

    def stream(self, *key):
        return make_stream(self.base_seed, self.experiment_id, *key)

    def to_dict(self):
        d = asdict(self)
        d["delta_grid"] = list(self.delta_grid)
        d["estimators"] = list(self.estimators)
        d["gamma"] = list(self.gen_spec().gamma)
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    columns: tuple
    records: list
    aggregates: list
    n_failed: int
    extras: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        out = {
            "schema_version": 1,
            "kind": self.config.kind,
            "config": self.config.to_dict(),
            "replications": self.config.B_reps,
            "n_failed": self.n_failed,
            "aggregates": self.aggregates,
            **self.extras,
        }
        if self.config.kind == "size":
            out["ejp"] = self.aggregates[0]["ejp"]
        return out

    def records_csv(self) -> str:
        return _csv_text(self.columns, self.records)

    def aggregates_csv(self) -> str:
        cols = tuple(self.aggregates[0]) if self.aggregates else ()
        return _csv_text(cols, self.aggregates)

    def write(self, out_dir: str):
        """Write ``records.csv``, ``aggregates.csv`` and ``summary.json`` atomically."""
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "records.csv"), self.records_csv())
        atomic_write_text(os.path.join(out_dir, "aggregates.csv"), self.aggregates_csv())
        atomic_write_text(
            os.path.join(out_dir, "summary.json"),
            json.dumps(self.summary, indent=2, sort_keys=False, default=_json_default) + "\n",
        )


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def atomic_write_text(path: str, text: str):
    """Write via a temporary sibling and rename, so ``path`` is never partial."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# --------------------------------------------------------------------------
# replications (module level so worker processes can unpickle them)


_NAN = float("nan")
_TEST_FIELDS = ("T1", "T2", "trace_sigma", "trace_sigma_sq", "T4", "p_value", "reject")


def _source_model(cfg, truth, b):
    src = gen_source(cfg.N, cfg.gen_spec(), truth, cfg.stream(_SOURCE, b))
    opts = replace(cfg.fit, solver=cfg.source_solver)
    return fit_multinomial_logistic(src, opts)


def _failure(exc):
    return f"failed:{type(exc).__name__}"


def _rep_mse(cfg, truth, b, _traces):
    rec = {"rep": b, "status": "ok"}
    try:
        tgt = gen_target(cfg.n, cfg.gen_spec(), truth, cfg.stream(_TARGET, b))
        for est in cfg.estimators:
            if est == "mle":
                theta, _ = fit_binary_logistic(tgt, cfg.fit)
            elif est == "transfer":
                model = _source_model(cfg, truth, b)
                rec["source_iterations"] = model.diagnostics.iterations
                theta = fit_transfer(model, tgt, cfg.fit).theta
            else:
                theta = oracle_fit(truth.B, tgt, cfg.fit).theta
            rec[f"mse_{est}"] = mse(theta, truth.theta)
    except (NumericalError, DataError) as exc:
        rec = {"rep": b, "status": _failure(exc)}
    return [rec]


def _rep_size(cfg, truth, b, traces):
    rec = {"rep": b, "status": "ok"}
    try:
        tgt = gen_target(cfg.n, cfg.gen_spec(), truth, cfg.stream(_TARGET, b))
        model = _source_model(cfg, truth, b)
        G = gram(tgt.X)
        res = statistics_from_fit(fit_transfer(model, tgt, cfg.fit), tgt, cfg.alpha, G)
        orc = statistics_from_fit(oracle_fit(truth.B, tgt, cfg.fit), tgt, cfg.alpha, G)
        rec["source_iterations"] = model.diagnostics.iterations
        for f in _TEST_FIELDS:
            rec[f] = getattr(res, f)
        rec["oracle_T4"] = orc.T4
        rec["oracle_reject"] = orc.reject
        if traces is not None:
            scale = math.sqrt(2.0 * traces[1] / cfg.n**2)
            rec["T3"] = res.T2 / scale
            rec["oracle_T3"] = orc.T2 / scale
    except (NumericalError, DataError) as exc:
        rec = {"rep": b, "status": _failure(exc)}
    return [rec]


def _rep_power(cfg, truth, b, _traces):
    try:
        model = _source_model(cfg, truth, b)
    except (NumericalError, DataError) as exc:
        return [{"rep": b, "delta": d, "status": _failure(exc)} for d in cfg.delta_grid]
    out = []
    for d in cfg.delta_grid:
        rec = {"rep": b, "delta": d, "status": "ok"}
        try:
            tgt = gen_target(cfg.n, cfg.gen_spec(d), truth, cfg.stream(_TARGET, b))
            res = statistics_from_fit(fit_transfer(model, tgt, cfg.fit), tgt, cfg.alpha)
            for f in _TEST_FIELDS:
                rec[f] = getattr(res, f)
        except (NumericalError, DataError) as exc:
            rec = {"rep": b, "delta": d, "status": _failure(exc)}
        out.append(rec)
    return out


_REPLICATORS = {"mse": _rep_mse, "size": _rep_size, "power": _rep_power}


def _call_replication(args):
    cfg, truth, b, traces = args
    from threadpoolctl import threadpool_limits

    # single-threaded BLAS keeps results identical for any worker count
    with threadpool_limits(limits=1):
        return _REPLICATORS[cfg.kind](cfg, truth, b, traces)


def _map_replications(cfg, truth, traces, workers):
    tasks = [(cfg, truth, b, traces) for b in range(cfg.B_reps)]
    step = max(cfg.B_reps // 10, 1)
    out = []
    if workers <= 1:
        it = map(_call_replication, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        it = pool.map(_call_replication, tasks)
    try:
        for b, recs in enumerate(it):
            out.append(recs)
            if (b + 1) % step == 0:
                log.info("%s: %d/%d replications", cfg.kind, b + 1, cfg.B_reps)
    finally:
        if pool is not None:
            pool.shutdown()
    return out


# --------------------------------------------------------------------------
# aggregation


def _ok(records):
    return [r for r in records if r["status"] == "ok"]


def _check_failures(cfg, n_failed, total):
    if total and n_failed / total > cfg.max_fail_fraction:
        raise ExperimentFailed(
            f"{n_failed} of {total} {cfg.kind} replications failed "
            f"(limit {cfg.max_fail_fraction:.0%})"
        )


def _quantiles(values):
    q1, med, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75])
    return float(q1), float(med), float(q3)


def aggregate_mse(cfg, records):
    ok = _ok(records)
    rows = []
    for est in cfg.estimators:
        logs = [math.log(r[f"mse_{est}"]) for r in ok]
        q1, med, q3 = _quantiles(logs) if logs else (_NAN,) * 3
        rows.append({
            "estimator": est,
            "n_ok": len(ok),
            "median_log_mse": med,
            "q1_log_mse": q1,
            "q3_log_mse": q3,
        })
    return rows


def _ejp(flags):
    return sum(1 for f in flags if f) / len(flags) if flags else _NAN


def aggregate_size(cfg, records):
    ok = _ok(records)
    t4 = np.array([r["T4"] for r in ok], dtype=float)
    row = {
        "n_ok": len(ok),
        "ejp": _ejp([r["reject"] for r in ok]),
        "ejp_oracle": _ejp([r["oracle_reject"] for r in ok]),
        "T4_mean": float(t4.mean()) if t4.size else _NAN,
        "T4_var": float(t4.var(ddof=1)) if t4.size > 1 else _NAN,
    }
    return [row]


def aggregate_power(cfg, records):
    rows = []
    for d in cfg.delta_grid:
        ok = _ok([r for r in records if r["delta"] == d])
        rows.append({"delta": d, "n_ok": len(ok), "ejp": _ejp([r["reject"] for r in ok])})
    return rows


_COLUMNS = {
    "mse": lambda cfg: ("rep", "status")
    + (("source_iterations",) if "transfer" in cfg.estimators else ())
    + tuple(f"mse_{e}" for e in cfg.estimators),
    "size": lambda cfg: ("rep", "status", "source_iterations") + _TEST_FIELDS
    + ("oracle_T4", "oracle_reject")
    + (("T3", "oracle_T3") if cfg.compute_T3 else ()),
    "power": lambda cfg: ("rep", "delta", "status") + _TEST_FIELDS,
}
_AGGREGATORS = {"mse": aggregate_mse, "size": aggregate_size, "power": aggregate_power}


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    truth = gen_coefficients(cfg.p, cfg.K, cfg.stream(_TRUTH), cfg.gen_spec().gamma_vec)
    extras = {}
    traces = None
    if cfg.kind == "size":
        ratio = cfg.n**2 * cfg.p / cfg.N
        extras["n2p_over_N"] = ratio
        if ratio > 1:
            log.warning("n^2 p / N = %.3g > 1: outside the small-ratio regime", ratio)
        if cfg.compute_T3:
            traces = sigma_gamma_traces(cfg.gen_spec(), truth, cfg.stream(_TRACE),
                                        draws=cfg.trace_draws)
            extras["trace_sigma_true"], extras["trace_sigma_sq_true"] = traces
    per_rep = _map_replications(cfg, truth, traces, workers)
    records = [r for recs in per_rep for r in recs]
    failed_reps = sum(1 for recs in per_rep if any(r["status"] != "ok" for r in recs))
    for r in records:
        if r["status"] != "ok":
            log.warning("replication %d: %s", r["rep"], r["status"])
    _check_failures(cfg, failed_reps, cfg.B_reps)
    return ExperimentResult(
        config=cfg,
        columns=_COLUMNS[cfg.kind](cfg),
        records=records,
        aggregates=_AGGREGATORS[cfg.kind](cfg, records),
        n_failed=failed_reps,
        extras=extras,
    )


def run_mse(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if cfg.kind != "mse":
        raise ConfigError("kind", "run_mse needs kind = mse")
    return run_experiment(cfg, workers)


def run_size(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if cfg.kind != "size":
        raise ConfigError("kind", "run_size needs kind = size")
    return run_experiment(cfg, workers)


def run_power(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    if cfg.kind != "power":
        raise ConfigError("kind", "run_power needs kind = power")
    return run_experiment(cfg, workers)


def published_grid(kind: str, base_seed: int = 0, B_reps: int = 1000, **overrides):
    """Full-scale configurations of the published simulation grids (K = 8)."""
    common = dict(K=8, B_reps=B_reps, base_seed=base_seed, **overrides)
    cfgs = []
    if kind == "mse":
        # low-dimensional (p < n) panels, with the target MLE
        for p in (40, 80, 120):
            cfgs.append(ExperimentConfig("mse", n=600, p=p, N=40_000, **common))
        for n in (400, 600, 800):
            cfgs.append(ExperimentConfig("mse", n=n, p=80, N=40_000, **common))
        for N in (20_000, 40_000, 80_000):
            cfgs.append(ExperimentConfig("mse", n=600, p=80, N=N, **common))
        # n <= p panels: the MLE does not exist
        tl = ("transfer", "oracle")
        for p in (100, 200, 300):
            cfgs.append(ExperimentConfig("mse", n=100, p=p, N=40_000, estimators=tl, **common))
        for n in (75, 100, 150):
            cfgs.append(ExperimentConfig("mse", n=n, p=300, N=40_000, estimators=tl, **common))
        for N in (20_000, 40_000, 80_000):
            cfgs.append(ExperimentConfig("mse", n=100, p=300, N=N, estimators=tl, **common))
    elif kind == "size":
        for n in (200, 300, 500):
            for N in (400_000, 600_000, 800_000):
                for p in (1000, 1500, 2000, 3000):
                    cfgs.append(ExperimentConfig("size", n=n, p=p, N=N, **common))
    elif kind == "power":
        grid = tuple(round(1.0 + 0.2 * i, 10) for i in range(21))
        for n in (200, 300, 500):
            cfgs.append(ExperimentConfig("power", n=n, p=2000, N=400_000,
                                         delta_grid=grid, **common))
    else:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}")
    # drop duplicate panel centres while keeping order
    seen, unique = set(), []
    for c in cfgs:
        key = (c.n, c.p, c.N, c.estimators)
        if key not in seen:
            seen.add(key)
            unique.append(c)
    return unique
