"""Median log-MSE of the target MLE, transfer and oracle estimators across source sizes."""

from _common import parser, setup_logging
from tlsuff.mc_harness import ExperimentConfig, run_mse


def main():
    ap = parser(__doc__, "results/mse")
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--p", type=int, default=40)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--N", type=int, nargs="+", default=[20_000, 40_000, 80_000])
    args = ap.parse_args()
    setup_logging(args)
    est = ("mle", "transfer", "oracle") if args.p < args.n else ("transfer", "oracle")
    print("N,estimator,median_log_mse,q1,q3")
    for N in args.N:
        cfg = ExperimentConfig("mse", n=args.n, p=args.p, N=N, K=args.K,
                               B_reps=args.reps or 200, estimators=est, base_seed=args.seed)
        res = run_mse(cfg, workers=args.workers)
        res.write(f"{args.out}/n{args.n}_p{args.p}_N{N}")
        for a in res.aggregates:
            print(f"{N},{a['estimator']},{a['median_log_mse']:.4f},"
                  f"{a['q1_log_mse']:.4f},{a['q3_log_mse']:.4f}")


if __name__ == "__main__":
    main()
