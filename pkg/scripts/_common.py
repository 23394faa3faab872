"""Shared helpers for the experiment scripts."""

from __future__ import annotations

import json
import time

import numpy as np

from cfx.cfe import CfeConfig, generate, pick_target
from cfx.metrics import evaluate


def spread(n_test: int, n: int) -> list[int]:
    return sorted(set(np.linspace(0, n_test - 1, n).round().astype(int).tolist()))


def explain_and_score(ds, model, cfg: CfeConfig, n: int, seed: int = 0) -> dict:
    t0 = time.perf_counter()
    results = []
    for i in spread(len(ds.y_test), n):
        x = ds.X_test[i]
        results.append(generate(x, pick_target(x, model, "second"), model, ds.X_train, ds.y_train, cfg))
    rep = evaluate(results, model, ds.X_train, ds.y_train, seed=seed)
    rep["seconds"] = time.perf_counter() - t0
    return rep


def show(title: str, rep: dict) -> None:
    a = rep["all"]
    print(f"{title}: n={a['n']} val={a['validity']:.3f} l1={a['l1']:.3f} l2={a['l2']:.3f} "
          f"dtw={a['dtw_plausibility']:.4f} (originals {rep['original_dtw_plausibility']:.4f}) "
          f"iso={a['iso_nominal_fraction']:.3f} [{rep['seconds']:.1f}s]")


def dump(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
