"""Error of the source MLE against source sample size (expected rate sqrt(p/N))."""

import math

import numpy as np

from _common import parser, setup_logging
from tlsuff.glm_core import fit_multinomial_logistic
from tlsuff.simgen import GenSpec, gen_coefficients, gen_source, make_stream


def main():
    ap = parser(__doc__, "")
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--N", type=int, nargs="+", default=[5_000, 20_000, 50_000, 200_000])
    args = ap.parse_args()
    setup_logging(args)
    spec = GenSpec(p=args.p, K=args.K)
    truth = gen_coefficients(args.p, args.K, make_stream(args.seed, 9, 0))
    reps = args.reps or 50
    print("N,median_frobenius_error,error_times_sqrt(N/p)")
    for N in args.N:
        errs = [np.linalg.norm(fit_multinomial_logistic(
                    gen_source(N, spec, truth, make_stream(args.seed, 9, 1, N, b))).B - truth.B)
                for b in range(reps)]
        med = float(np.median(errs))
        print(f"{N},{med:.5f},{med * math.sqrt(N / args.p):.4f}")


if __name__ == "__main__":
    main()
