"""Empirical power curves over signal strength for several target sizes."""

import time

from _common import parser, setup_logging
from tlsuff.mc_harness import ExperimentConfig, run_power


def main():
    ap = parser(__doc__, "results/power")
    ap.add_argument("--n", type=int, nargs="+", default=[200, 500])
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--N", type=int, default=100_000)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--deltas", type=float, nargs="+", default=[1.0, 3.0, 5.0])
    args = ap.parse_args()
    setup_logging(args)
    print("n," + ",".join(f"delta={d:g}" for d in args.deltas))
    for n in args.n:
        cfg = ExperimentConfig("power", n=n, p=args.p, N=args.N, K=args.K,
                               B_reps=args.reps or 300, delta_grid=tuple(args.deltas),
                               base_seed=args.seed)
        t0 = time.perf_counter()
        res = run_power(cfg, workers=args.workers)
        res.write(f"{args.out}/n{n}_p{args.p}_N{args.N}")
        print(f"{n}," + ",".join(f"{a['ejp']:.3f}" for a in res.aggregates)
              + f"  ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
