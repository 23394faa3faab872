"""Desk-scale CBF run: 300 train / 150 test series, T=64; train, explain 50 instances, score.

    python3 scripts/run_cbf_experiment.py --seed 7 --out cbf_metrics.json
"""

import argparse
import time

from _common import dump, explain_and_score, show

from cfx.cfe import CfeConfig
from cfx.datasets import generate_cbf
from cfx.series import z_normalize
from cfx.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n", type=int, default=50, help="instances to explain")
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    ds = z_normalize(generate_cbf(length=64, per_class=100, seed=args.seed, test_per_class=50))
    t0 = time.perf_counter()
    model, report = train(ds, TrainConfig(seed=args.seed))
    print(f"train: test accuracy {report.test_accuracy:.4f}, {report.epochs_run} epochs, "
          f"{time.perf_counter() - t0:.1f}s")
    rep = explain_and_score(ds, model, CfeConfig(lam=args.lam), args.n)
    show(f"CBF lambda={args.lam}", rep)
    if args.out:
        dump(args.out, {"train": report.to_dict(), "explain": rep})


if __name__ == "__main__":
    main()
