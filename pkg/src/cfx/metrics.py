"""Evaluation of a batch of counterfactuals: validity, L1/L2, DTW plausibility, isolation-forest nominality.

All distances are computed on normalized series.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from cfx.cfe import CfeResult
from cfx.iforest import iso_forest_fit, iso_forest_score
from cfx.nn import Classifier
from cfx.seeding import derive_seed
from cfx.warp import dtw_to_many

log = logging.getLogger(__name__)

PLAUSIBILITY_NEIGHBORS = 10


@dataclass
class MetricsReport:
    mode: str
    n: int
    validity: float | None
    l1: float | None
    l2: float | None
    dtw_plausibility: float | None
    iso_nominal_fraction: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _require(results):
    if len(results) == 0:
        raise ValueError("no counterfactual results to evaluate")


def flips(results, classifier: Classifier) -> np.ndarray:
    """Per-result indicator that the classifier's label changed, recomputed from the series."""
    _require(results)
    before = classifier.predict(np.stack([r.original for r in results]))
    after = classifier.predict(np.stack([r.counterfactual for r in results]))
    return before != after


def validity_score(results, classifier: Classifier) -> float:
    return float(np.mean(flips(results, classifier)))


def lp_distances(results, p: int) -> np.ndarray:
    _require(results)
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    return np.array([np.linalg.norm((r.original - r.counterfactual).ravel(), ord=p) for r in results])


def lp_distance(results, p: int) -> float:
    """Mean ``||X - X'||_p`` over flattened series (L2 is the norm, not its square)."""
    return float(np.mean(lp_distances(results, p)))


def plausibility_of(series, target: int, X_train: np.ndarray, y_train: np.ndarray,
                    n_neighbors: int = PLAUSIBILITY_NEIGHBORS) -> float:
    """Mean of the ``n_neighbors`` smallest DTW distances to target-class train series, per ``1/(dT)``."""
    series = np.asarray(series, dtype=np.float64)
    pool = np.asarray(X_train)[np.asarray(y_train) == target]
    if len(pool) == 0:
        raise ValueError(f"no training samples for target class {target}")
    if len(pool) < n_neighbors:
        warnings.warn(f"only {len(pool)} target-class samples; averaging over all of them", stacklevel=2)
    d = np.sort(dtw_to_many(series, pool))[:n_neighbors]
    return float(d.mean()) / series.size


def dtw_plausibility_values(results, X_train, y_train, use_original: bool = False,
                            n_neighbors: int = PLAUSIBILITY_NEIGHBORS) -> np.ndarray:
    _require(results)
    return np.array([plausibility_of(r.original if use_original else r.counterfactual, r.target,
                                     X_train, y_train, n_neighbors) for r in results])


def dtw_plausibility(results, X_train, y_train, n_neighbors: int = PLAUSIBILITY_NEIGHBORS) -> float:
    return float(np.mean(dtw_plausibility_values(results, X_train, y_train, n_neighbors=n_neighbors)))


def nominal_flags(results, X_train, y_train, seed: int = 0) -> np.ndarray:
    """Isolation-forest nominal indicator per result, one forest per target class."""
    _require(results)
    X_train, y_train = np.asarray(X_train), np.asarray(y_train)
    out = np.zeros(len(results), dtype=bool)
    targets = np.array([r.target for r in results])
    for tgt in np.unique(targets):
        forest = iso_forest_fit(X_train[y_train == tgt], seed=derive_seed(seed, f"iforest/{int(tgt)}"))
        idx = np.flatnonzero(targets == tgt)
        out[idx] = forest.nominal(np.stack([results[i].counterfactual for i in idx]))
    return out


def _report(mode, results, flip, l1, l2, plaus, nominal) -> MetricsReport:
    if len(results) == 0:
        return MetricsReport(mode, 0, None, None, None, None, None)
    return MetricsReport(mode, len(results), float(flip.mean()), float(l1.mean()), float(l2.mean()),
                         float(plaus.mean()), float(nominal.mean()))


def evaluate(results: list[CfeResult], classifier: Classifier, X_train, y_train, seed: int = 0) -> dict:
    """All five metrics over every result and over the valid ones only.

    Also reports the plausibility of the untouched originals against the same
    target classes, as a reference point.
    """
    _require(results)
    flip = flips(results, classifier)
    l1, l2 = lp_distances(results, 1), lp_distances(results, 2)
    plaus = dtw_plausibility_values(results, X_train, y_train)
    plaus_orig = dtw_plausibility_values(results, X_train, y_train, use_original=True)
    nominal = nominal_flags(results, X_train, y_train, seed)
    keep = np.flatnonzero(flip)
    valid_results = [results[i] for i in keep]
    return {
        "all": _report("all", results, flip, l1, l2, plaus, nominal).to_dict(),
        "valid_only": _report("valid_only", valid_results, flip[keep], l1[keep], l2[keep], plaus[keep],
                              nominal[keep]).to_dict(),
        "original_dtw_plausibility": float(plaus_orig.mean()),
    }
