"""Command-line interface.

Subcommands::

    tlsuff generate   --p P --K K --N N --n n [--delta D] --out DIR
    tlsuff fit-source SOURCE.csv --out MODEL.csv [--center]
    tlsuff test       TARGET.csv --model MODEL.csv [--alpha A] [--out RESULT.json]
    tlsuff simulate   CONFIG --out DIR [--full] [--threads T]

Exit status: 0 success, 2 usage or configuration error, 3 data or schema
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings

from . import dataio
from .errors import ConfigError, DataError, DimensionMismatch, NumericalError, TLSuffError
from .glm_core import (
    FitOptions,
    SourceDataset,
    SourceModel,
    TargetDataset,
    center_columns,
    fit_multinomial_logistic,
)
from .mc_harness import atomic_write_text, published_grid, run_experiment
from .simgen import GenSpec, gen_coefficients, gen_source, gen_target, make_stream
from .suff_test import AsymptoticRegimeWarning, RECORD_FIELDS, test_sufficiency

log = logging.getLogger("tlsuff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "TLSUFF_THREADS"
# stream experiment id reserved for one-off dataset export
_EXPORT_ID = 0


def _add_fit_args(p):
    g = p.add_argument_group("fit options")
    g.add_argument("--grad-tol", type=float, default=1e-8)
    g.add_argument("--rel-tol", type=float, default=1e-12)
    g.add_argument("--max-iter", type=int, default=200)
    g.add_argument("--ridge", type=float, default=0.0)
    g.add_argument("--solver", choices=("auto", "newton", "lbfgs"), default="auto")


def _fit_options(args):
    try:
        return FitOptions(grad_tol=args.grad_tol, rel_tol=args.rel_tol,
                          max_iter=args.max_iter, ridge=args.ridge, solver=args.solver)
    except ValueError as exc:
        raise ConfigError("fit options", str(exc)) from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tlsuff",
        description="Transfer-learning estimation and sufficiency testing for logistic models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="export a simulated source/target pair as CSV")
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--K", type=int, default=8)
    g.add_argument("--N", type=int, required=True, help="source sample size")
    g.add_argument("--n", type=int, required=True, help="target sample size")
    g.add_argument("--delta", type=float, default=0.0)
    g.add_argument("--rho", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    f = sub.add_parser("fit-source", help="fit the multinomial source model")
    f.add_argument("source_csv")
    f.add_argument("--out", required=True, help="model CSV path (sidecar .json written alongside)")
    f.add_argument("--classes", type=int, default=None,
                   help="number of non-base classes K (default: largest label)")
    f.add_argument("--center", action="store_true", help="center feature columns first")
    _add_fit_args(f)

    t = sub.add_parser("test", help="test transfer-learning sufficiency on target data")
    t.add_argument("target_csv")
    t.add_argument("--model", required=True)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--out", default=None, help="result JSON path")
    t.add_argument("--center", action="store_true", help="center feature columns first")
    _add_fit_args(t)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment from a config file")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="override base_seed")
    s.add_argument("--alpha", type=float, default=None, help="override alpha")
    s.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    s.add_argument("--full", action="store_true",
                   help="run the full-scale published grid for the config's kind")
    return parser


def cmd_generate(args):
    spec = GenSpec(p=args.p, K=args.K, rho=args.rho, delta=args.delta, base_seed=args.seed)
    truth = gen_coefficients(args.p, args.K, make_stream(args.seed, _EXPORT_ID, 0))
    src = gen_source(args.N, spec, truth, make_stream(args.seed, _EXPORT_ID, 1, 0))
    tgt = gen_target(args.n, spec, truth, make_stream(args.seed, _EXPORT_ID, 2, 0))
    os.makedirs(args.out, exist_ok=True)
    dataio.write_source_csv(os.path.join(args.out, "source.csv"), src)
    dataio.write_target_csv(os.path.join(args.out, "target.csv"), tgt)
    dataio.write_model(os.path.join(args.out, "truth_B.csv"), SourceModel(truth.B),
                       {"gamma": list(spec.gamma), "theta": truth.theta.tolist(),
                        "delta": args.delta, "rho": args.rho, "seed": args.seed})
    print(f"wrote source ({args.N} x {args.p}, K={args.K}) and target "
          f"({args.n} x {args.p}, delta={args.delta:g}) to {args.out}")
    return EXIT_OK


def cmd_fit_source(args):
    opts = _fit_options(args)
    data = dataio.read_source_csv(args.source_csv, args.classes)
    if args.center:
        data = SourceDataset(center_columns(data.Xs)[0], data.ys, data.K)
    t0 = time.perf_counter()
    model = fit_multinomial_logistic(data, opts)
    d = model.diagnostics
    dataio.write_model(args.out, model, {"centered": bool(args.center)})
    print(f"fitted B ({model.p} x {model.K}) on N={data.N}: {d.solver}, "
          f"{d.iterations} iterations, loglik {d.final_loglik:.6f}, "
          f"grad {d.final_grad_norm:.3g} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK


def cmd_test(args):
    if not 0.0 < args.alpha < 1.0:
        raise ConfigError("alpha", "must lie in (0, 1)")
    opts = _fit_options(args)
    model = dataio.read_model(args.model)
    data = dataio.read_target_csv(args.target_csv)
    if data.p != model.p:
        raise DimensionMismatch(
            f"model has p={model.p} features but target data has p={data.p}"
        )
    if args.center:
        data = TargetDataset(center_columns(data.X)[0], data.y)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AsymptoticRegimeWarning)
        res = test_sufficiency(model, data, args.alpha, opts)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    record = res.to_record()
    assert tuple(record) == RECORD_FIELDS
    if args.out:
        atomic_write_text(args.out, json.dumps(record, indent=2) + "\n")
    decision = "reject" if res.reject else "do not reject"
    print(f"T4 = {res.T4:.6g}  p-value = {res.p_value:.6g}  alpha = {res.alpha:g}  "
          f"decision: {decision} transfer-learning sufficiency"
          + ("  (features centered)" if args.center else ""))
    return EXIT_OK


def _threads(args):
    if args.threads is not None:
        return max(args.threads, 1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"not an integer: {env!r}") from None
    return 1


def cmd_simulate(args):
    workers = _threads(args)
    overrides = {"base_seed": args.seed, "alpha": args.alpha}
    cfg = dataio.load_experiment_config(args.config, **overrides)
    if args.full:
        cfgs = published_grid(cfg.kind, base_seed=cfg.base_seed, alpha=cfg.alpha,
                          fit=cfg.fit, source_solver=cfg.source_solver)
        log.warning("--full: %d full-scale %s configurations with %d replications each; "
                    "expect many hours to days of compute", len(cfgs), cfg.kind, cfgs[0].B_reps)
        targets = [(c, os.path.join(args.out, f"{c.kind}_n{c.n}_p{c.p}_N{c.N}")) for c in cfgs]
    else:
        targets = [(cfg, args.out)]
    for c, out in targets:
        t0 = time.perf_counter()
        result = run_experiment(c, workers=workers)
        result.write(out)
        print(f"{c.kind}: n={c.n} p={c.p} N={c.N} K={c.K} reps={c.B_reps} "
              f"failed={result.n_failed} ({time.perf_counter() - t0:.1f}s) -> {out}")
        for row in result.aggregates:
            print("  " + "  ".join(f"{k}={_short(v)}" for k, v in row.items()))
    return EXIT_OK


def _short(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


_COMMANDS = {
    "generate": cmd_generate,
    "fit-source": cmd_fit_source,
    "test": cmd_test,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TLSuffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
