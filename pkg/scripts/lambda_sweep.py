"""Proximity/plausibility trade-off on CBF: sweep the weight lambda, report L2 and DTW plausibility.

    python3 scripts/lambda_sweep.py --lams 0.5 1 2 5 --n 20
"""

import argparse

from _common import dump, explain_and_score, show

from cfx.cfe import CfeConfig
from cfx.datasets import generate_cbf
from cfx.series import z_normalize
from cfx.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.5, 1.0, 2.0, 5.0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    ds = z_normalize(generate_cbf(length=64, per_class=100, seed=args.seed, test_per_class=50))
    model, _ = train(ds, TrainConfig(seed=args.seed))
    rows = {}
    for lam in args.lams:
        rows[str(lam)] = rep = explain_and_score(ds, model, CfeConfig(lam=lam), args.n)
        show(f"lambda={lam:g}", rep)
    if args.out:
        dump(args.out, rows)


if __name__ == "__main__":
    main()
