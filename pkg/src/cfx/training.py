"""Mini-batch training of the CNN classifier with early stopping on a held-out slice."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from cfx import autodiff as ad
from cfx.nn import Classifier, to_batch
from cfx.optim import Adam
from cfx.seeding import derive_seed, rng_for
from cfx.series import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 80
    patience: int = 10
    lr: float = 1e-3
    weight_decay: float = 1e-4
    dropout: float = 0.2
    batch_size: int = 32
    val_fraction: float = 0.2
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    train_accuracy: float
    val_accuracy: float | None
    test_accuracy: float | None
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``fraction`` of each class (at least one sample when the class has two or more)."""
    fit, held = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_held = int(round(fraction * idx.size))
        if fraction > 0 and idx.size >= 2:
            n_held = max(1, n_held)
        n_held = min(n_held, idx.size - 1)
        held.append(idx[:n_held])
        fit.append(idx[n_held:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(held))


def _loss_and_acc(model: Classifier, X: np.ndarray, y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    total, correct = 0.0, 0
    for s in range(0, len(y), batch):
        logits = model.logits(X[s:s + batch], frozen=True, training=False).data
        logp = ad.log_softmax_np(logits)
        yb = y[s:s + batch]
        total += -logp[np.arange(len(yb)), yb].sum()
        correct += int((logits.argmax(axis=1) == yb).sum())
    return float(total / len(y)), correct / len(y)


def accuracy(model: Classifier, X_series: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return _loss_and_acc(model, to_batch(X_series), np.asarray(y))[1]


def train(dataset: Dataset, config: TrainConfig | None = None) -> tuple[Classifier, TrainReport]:
    """Fit the CNN with Adam on mean cross-entropy; returns the best-validation model."""
    config = config or TrainConfig()
    dataset.check_trainable()
    X = to_batch(dataset.X_train)
    y = dataset.y_train
    model = Classifier(dataset.channels, dataset.n_classes, dropout=config.dropout,
                       seed=derive_seed(config.seed, "train/init"), length=dataset.length,
                       labels=dataset.labels)

    fit_idx, val_idx = stratified_split(y, config.val_fraction, rng_for(config.seed, "train/split"))
    if len(val_idx) == 0:
        val_idx = fit_idx
    Xf, yf, Xv, yv = X[fit_idx], y[fit_idx], X[val_idx], y[val_idx]

    params = model.parameters()
    opt = Adam([p.data for p in params], lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = rng_for(config.seed, "train/shuffle")
    dropout_rng = rng_for(config.seed, "train/dropout")

    best_loss, best_epoch, best_state = np.inf, 0, model.snapshot()
    history, stale, epoch = [], 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(yf))
        running = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            for p in params:
                p.zero_grad()
            loss = ad.cross_entropy(model.logits(Xf[idx], rng=dropout_rng, training=True), yf[idx])
            loss.backward()
            opt.step([p.grad for p in params])
            running += float(loss.data) * len(idx)
        val_loss, val_acc = _loss_and_acc(model, Xv, yv)
        history.append({"epoch": epoch, "train_loss": running / len(yf), "val_loss": val_loss, "val_acc": val_acc})
        log.debug("epoch %d train_loss %.4f val_loss %.4f val_acc %.3f", epoch, running / len(yf), val_loss, val_acc)
        if val_loss < best_loss - config.min_delta:
            best_loss, best_epoch, best_state, stale = val_loss, epoch, model.snapshot(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.load_state(best_state)
    model.eval_mode()
    for p in params:
        p.zero_grad()
    report = TrainReport(
        train_accuracy=accuracy(model, dataset.X_train, dataset.y_train),
        val_accuracy=_loss_and_acc(model, Xv, yv)[1],
        test_accuracy=accuracy(model, dataset.X_test, dataset.y_test) if len(dataset.y_test) else None,
        epochs_run=epoch,
        best_epoch=best_epoch,
        best_val_loss=float(best_loss),
        history=history,
    )
    log.info("trained %d epochs (best %d): train %.3f val %.3f test %s", epoch, best_epoch,
             report.train_accuracy, report.val_accuracy, report.test_accuracy)
    return model, report
