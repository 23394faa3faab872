"""ItalyPowerDemand run on the vendored archive files (67 train / 1029 test, T=24).

    python3 scripts/run_italy.py --data data/ItalyPowerDemand
"""

import argparse

from _common import dump, explain_and_score, show

from cfx.cfe import CfeConfig
from cfx.datasets import load_dataset
from cfx.series import z_normalize
from cfx.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/ItalyPowerDemand")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    ds = z_normalize(load_dataset(args.data))
    model, report = train(ds, TrainConfig(seed=args.seed))
    print(f"train: test accuracy {report.test_accuracy:.4f}, {report.epochs_run} epochs")
    rep = explain_and_score(ds, model, CfeConfig(), args.n)
    show("ItalyPowerDemand", rep)
    if args.out:
        dump(args.out, {"train": report.to_dict(), "explain": rep})


if __name__ == "__main__":
    main()
