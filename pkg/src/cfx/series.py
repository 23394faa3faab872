"""Time series and dataset containers plus train-split z-normalization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SIGMA_FLOOR = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """A single ``(T, d)`` real-valued sequence."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"time series must have shape (T, d) with T, d >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("time series contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.ravel(self.mean)))
        object.__setattr__(self, "std", _frozen(np.ravel(self.std)))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std dimensionality mismatch")

    @property
    def channels(self) -> int:
        return self.mean.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        # relative to |mean|: summation rounding leaves ~1e-16 * |mean| of spurious spread
        return self.std < SIGMA_FLOOR * np.maximum(1.0, np.abs(self.mean))

    @property
    def scale(self) -> np.ndarray:
        # degenerate channels are only shifted
        return np.where(self.degenerate, 1.0, self.std)

    @classmethod
    def identity(cls, d: int) -> NormStats:
        return cls(np.zeros(d), np.ones(d))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled train/test splits stored as stacked ``(n, T, d)`` arrays.

    ``y_train``/``y_test`` hold dense label indices into ``labels``.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    labels: tuple[str, ...]
    stats: NormStats | None = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X_train = np.asarray(self.X_train, dtype=np.float64)
        X_test = np.asarray(self.X_test, dtype=np.float64)
        if X_test.size == 0:
            X_test = X_test.reshape((0,) + X_train.shape[1:])
        if X_train.ndim != 3 or X_train.shape[0] == 0:
            raise ValueError("empty dataset")
        if X_test.shape[1:] != X_train.shape[1:]:
            raise ValueError(f"train/test shape mismatch: {X_train.shape[1:]} vs {X_test.shape[1:]}")
        for X in (X_train, X_test):
            if not np.all(np.isfinite(X)):
                raise ValueError("dataset contains non-finite values")
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate label names")
        y_train = np.asarray(self.y_train, dtype=np.int64)
        y_test = np.asarray(self.y_test, dtype=np.int64)
        if y_train.shape != (X_train.shape[0],) or y_test.shape != (X_test.shape[0],):
            raise ValueError("label count does not match series count")
        for y in (y_train, y_test):
            if y.size and (y.min() < 0 or y.max() >= len(labels)):
                raise ValueError("label index outside vocabulary")
        object.__setattr__(self, "X_train", _frozen(X_train))
        object.__setattr__(self, "X_test", _frozen(X_test))
        object.__setattr__(self, "y_train", np.array(y_train))
        object.__setattr__(self, "y_test", np.array(y_test))
        self.y_train.setflags(write=False)
        self.y_test.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def length(self) -> int:
        return self.X_train.shape[1]

    @property
    def channels(self) -> int:
        return self.X_train.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def label(self, index: int) -> ClassLabel:
        return ClassLabel(int(index), self.labels[index])

    def label_by_name(self, name: str) -> ClassLabel:
        try:
            return ClassLabel(self.labels.index(name), name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}; known: {list(self.labels)}") from None

    @property
    def train(self) -> list[tuple[TimeSeries, ClassLabel]]:
        return [(TimeSeries(x), self.label(y)) for x, y in zip(self.X_train, self.y_train)]

    @property
    def test(self) -> list[tuple[TimeSeries, ClassLabel]]:
        return [(TimeSeries(x), self.label(y)) for x, y in zip(self.X_test, self.y_test)]

    def check_trainable(self):
        """Raise unless the train split supports classification (n >= 2, >= 2 classes)."""
        if self.X_train.shape[0] < 2 or np.unique(self.y_train).size < 2:
            raise ValueError("train split needs at least two samples from two distinct classes")

    @classmethod
    def from_pairs(cls, train, test=(), name="dataset") -> Dataset:
        """Build from ``(TimeSeries, ClassLabel)`` pairs, re-indexing by label name.

        The vocabulary is the lexicographically sorted union of names in both splits.
        """
        train, test = list(train), list(test)
        if not train:
            raise ValueError("empty dataset")
        names = sorted({lab.name for _, lab in train} | {lab.name for _, lab in test})
        lookup = {n: i for i, n in enumerate(names)}

        def stack(pairs):
            if not pairs:
                T, d = train[0][0].values.shape
                return np.empty((0, T, d)), np.empty(0, dtype=np.int64)
            shapes = {s.values.shape for s, _ in pairs}
            if len(shapes) != 1:
                raise ValueError(f"series of unequal shape in one dataset: {sorted(shapes)}")
            return (np.stack([s.values for s, _ in pairs]),
                    np.array([lookup[lab.name] for _, lab in pairs], dtype=np.int64))

        X_train, y_train = stack(train)
        X_test, y_test = stack(test)
        return cls(X_train, y_train, X_test, y_test, tuple(names), name=name)


def compute_stats(X: np.ndarray) -> NormStats:
    """Per-channel moments over all samples and timesteps of an ``(n, T, d)`` array."""
    flat = np.asarray(X, dtype=np.float64).reshape(-1, X.shape[-1])
    return NormStats(flat.mean(axis=0), flat.std(axis=0))


def apply_stats(values: np.ndarray, stats: NormStats) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != stats.channels:
        raise ValueError(f"channel-count mismatch: series has {values.shape[-1]}, stats have {stats.channels}")
    return (values - stats.mean) / stats.scale


def z_normalize(dataset: Dataset) -> Dataset:
    """Standardize every channel with mean/std taken from the train split only."""
    if dataset.X_train.shape[0] == 0:
        raise ValueError("empty dataset")
    stats = compute_stats(dataset.X_train)
    return replace(
        dataset,
        X_train=apply_stats(dataset.X_train, stats),
        X_test=apply_stats(dataset.X_test, stats),
        stats=stats,
    )


def denormalize(series, stats: NormStats):
    """Map normalized values back to the original units.

    Accepts a ``TimeSeries`` (returns one) or a raw array with channels last.
    """
    if isinstance(series, TimeSeries):
        return TimeSeries(denormalize(series.values, stats))
    values = np.asarray(series, dtype=np.float64)
    if values.shape[-1] != stats.channels:
        raise ValueError(f"channel-count mismatch: series has {values.shape[-1]}, stats have {stats.channels}")
    return values * stats.scale + stats.mean
