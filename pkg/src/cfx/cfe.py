"""Counterfactual search by gradient descent in input space.

The objective is ``prox + sparse + lam * (valid + dtw)`` where ``prox`` and
``sparse`` are the mean squared / mean absolute perturbation, ``valid`` is a
hinge on the target-class probability and ``dtw`` is the mean soft-DTW to the
k nearest target-class training series of the original input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from cfx.nn import Classifier
from cfx.optim import Adam
from cfx.warp import dtw_to_many, soft_dtw_many

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("prox", "sparse", "valid", "dtw", "total")


class TargetError(ValueError):
    """Target class cannot be used for this input (same as prediction, too few samples, ...)."""


@dataclass
class CfeConfig:
    lam: float = 1.0
    k: int = 10
    gamma: float = 1.0
    tau: float = 0.5
    iterations: int = 200
    lr: float = 0.05
    seed: int = 0
    neighbor_metric: str = "euclidean"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.neighbor_metric not in ("euclidean", "dtw"):
            raise ValueError("neighbor_metric must be 'euclidean' or 'dtw'")


@dataclass
class LossTerms:
    prox: float
    sparse: float
    valid: float
    dtw: float
    total: float
    grad: np.ndarray
    probs: np.ndarray

    def row(self) -> tuple[float, ...]:
        return (self.prox, self.sparse, self.valid, self.dtw, self.total)


@dataclass
class CfeResult:
    original: np.ndarray
    counterfactual: np.ndarray
    source: int
    target: int
    valid: bool
    trajectory: np.ndarray  # (iterations + 1, 5) in LOSS_COLUMNS order
    neighbor_ids: np.ndarray
    iterations: int
    best_iteration: int | None = None
    trivial: bool = False
    target_probability: float = float("nan")
    meta: dict = field(default_factory=dict)


def target_neighbors(X, target: int, X_train: np.ndarray, y_train: np.ndarray, k: int,
                     metric: str = "euclidean") -> np.ndarray:
    """Train indices of the ``k`` target-class series nearest to ``X``.

    Ordered by distance, ties by lower train index.
    """
    X = np.asarray(X, dtype=np.float64)
    pool = np.flatnonzero(np.asarray(y_train) == target)
    if k < 1:
        raise ValueError("k must be >= 1")
    if pool.size < k:
        raise TargetError(f"only {pool.size} training samples carry the target class; use k <= {pool.size}")
    cand = np.asarray(X_train)[pool]
    if metric == "euclidean":
        dist = np.sqrt(((cand - X[None]) ** 2).reshape(len(pool), -1).sum(axis=1))
    elif metric == "dtw":
        dist = dtw_to_many(X, cand)
    else:
        raise ValueError(f"unknown neighbor metric {metric!r}")
    order = np.lexsort((pool, dist))
    return pool[order[:k]]


def composite_loss(X_cf, X, neighbors: np.ndarray, classifier: Classifier, target: int,
                   config: CfeConfig) -> LossTerms:
    """Loss terms at ``X_cf`` and the gradient of the total w.r.t. ``X_cf``."""
    X_cf = np.asarray(X_cf, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X_cf.shape != X.shape:
        raise ValueError(f"counterfactual shape {X_cf.shape} differs from original {X.shape}")
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.ndim != 3 or len(neighbors) == 0:
        raise ValueError("need at least one neighbor series (k >= 1)")
    n = X.size
    delta = X_cf - X
    prox = float(np.sum(delta * delta)) / n
    sparse = float(np.sum(np.abs(delta))) / n
    grad = (2.0 * delta + np.sign(delta)) / n

    p, dp, probs = classifier.target_probability(X_cf, target)
    valid = max(0.0, config.tau - p)
    k = len(neighbors)
    vals, g_dtw = soft_dtw_many(X_cf, neighbors, config.gamma)
    dtw = float(vals.sum()) / k

    if config.lam:
        if p < config.tau:
            grad = grad - config.lam * dp
        grad = grad + config.lam * g_dtw / k
    total = prox + sparse + config.lam * (valid + dtw)
    return LossTerms(prox, sparse, valid, dtw, total, grad, probs)


def generate(X, target: int, classifier: Classifier, X_train: np.ndarray, y_train: np.ndarray,
             config: CfeConfig | None = None, init: np.ndarray | None = None) -> CfeResult:
    """Optimize a counterfactual for ``X`` towards class ``target``.

    Returns the lowest-loss iterate the classifier assigns to ``target``;
    if no iterate gets there, the last one is returned with ``valid=False``.
    The search starts from ``X`` unless ``init`` is given.
    """
    config = config or CfeConfig()
    X = np.array(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    probs0 = classifier.predict_proba_series(X)[0]
    source = int(probs0.argmax())
    if source == target:
        return CfeResult(X.copy(), X.copy(), source, target, True, np.zeros((0, len(LOSS_COLUMNS))),
                         np.zeros(0, dtype=np.int64), 0, None, trivial=True,
                         target_probability=float(probs0[target]))

    ids = target_neighbors(X, target, X_train, y_train, config.k, config.neighbor_metric)
    neighbors = np.ascontiguousarray(np.asarray(X_train)[ids])
    X_cf = X.copy() if init is None else np.array(init, dtype=np.float64).reshape(X.shape)
    opt = Adam([X_cf], lr=config.lr)
    rows = []
    best, best_total, best_it, best_p = None, np.inf, None, float("nan")
    for it in range(config.iterations + 1):
        terms = composite_loss(X_cf, X, neighbors, classifier, target, config)
        rows.append(terms.row())
        if int(terms.probs.argmax()) == target and terms.total < best_total:
            best, best_total, best_it, best_p = X_cf.copy(), terms.total, it, float(terms.probs[target])
        if it < config.iterations:
            opt.step([terms.grad])

    if best is None:
        best = X_cf.copy()
        best_p = float(classifier.predict_proba_series(best)[0, target])
    valid = int(classifier.predict_proba_series(best)[0].argmax()) == target
    return CfeResult(X, best, source, target, valid, np.array(rows), ids, config.iterations,
                     best_it, target_probability=best_p)


def pick_target(X, classifier: Classifier, policy: str = "second") -> int:
    """Choose the target class: ``"second"`` (runner-up probability) or ``"fixed:<label>"``."""
    if classifier.n_classes < 2:
        raise ValueError("need at least two classes")
    probs = classifier.predict_proba_series(np.asarray(X, dtype=np.float64))[0]
    predicted = int(probs.argmax())
    if policy == "second":
        # stable sort: ties resolve to the lower class index
        order = np.argsort(-probs, kind="stable")
        return int(order[1])
    if policy.startswith("fixed:"):
        name = policy[len("fixed:"):]
        if name not in classifier.labels:
            raise ValueError(f"unknown target label {name!r}; known: {list(classifier.labels)}")
        idx = classifier.labels.index(name)
        if idx == predicted:
            raise TargetError(f"target label {name!r} equals the predicted label")
        return idx
    raise ValueError(f"unknown target policy {policy!r}; use 'second' or 'fixed:<label>'")
