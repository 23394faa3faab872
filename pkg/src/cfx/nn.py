"""The 1-D CNN classifier: three conv blocks (32, 64, 128), global average pool, linear head."""

from __future__ import annotations

import numpy as np

from cfx import autodiff as ad
from cfx.autodiff import BatchNormState, Tensor

BLOCK_CHANNELS = (32, 64, 128)
KERNEL = 3
POOL = 2


def min_length() -> int:
    return POOL ** len(BLOCK_CHANNELS)


def _frozen(t: Tensor) -> Tensor:
    # a gradient-free view: the tape never reaches the stored parameter
    return Tensor(t.data)


def _same(t: Tensor) -> Tensor:
    return t


class Conv1dBlock:
    """conv(k=3, same padding) -> batchnorm -> ReLU -> maxpool(2)."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        fan_in = in_ch * KERNEL
        bound = np.sqrt(6.0 / fan_in)
        self.kernel = Tensor(rng.uniform(-bound, bound, size=(out_ch, in_ch, KERNEL)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.gamma = Tensor(np.ones(out_ch), requires_grad=True)
        self.beta = Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn = BatchNormState(out_ch)

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    def __call__(self, x, training: bool, frozen: bool = False) -> Tensor:
        p = _frozen if frozen else _same
        h = ad.conv1d(x, p(self.kernel), p(self.bias))
        h = ad.batch_norm(h, p(self.gamma), p(self.beta), self.bn, training)
        h = ad.relu(h)
        return ad.max_pool1d(h, POOL)


class Classifier:
    """Maps a ``(B, d, T)`` batch to class probabilities ``(B, c)``.

    Inference mode (the default) uses frozen batch-norm statistics and no
    dropout, so :meth:`predict_proba` is a pure function of its input.
    """

    def __init__(self, in_channels: int, n_classes: int, dropout: float = 0.2, seed: int = 0,
                 length: int | None = None, labels: tuple[str, ...] | None = None):
        if n_classes < 2:
            raise ValueError("classifier needs at least two classes")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        chans = (in_channels,) + BLOCK_CHANNELS
        self.blocks = [Conv1dBlock(chans[i], chans[i + 1], rng) for i in range(len(BLOCK_CHANNELS))]
        bound = np.sqrt(6.0 / BLOCK_CHANNELS[-1])
        self.head_w = Tensor(rng.uniform(-bound, bound, size=(n_classes, BLOCK_CHANNELS[-1])), requires_grad=True)
        self.head_b = Tensor(np.zeros(n_classes), requires_grad=True)
        self.dropout = dropout
        self.training = False
        self.length = length
        self.labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n_classes))
        if len(self.labels) != n_classes:
            raise ValueError("label names do not match class count")

    @property
    def in_channels(self) -> int:
        return self.blocks[0].in_channels

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    def train_mode(self):
        self.training = True
        return self

    def eval_mode(self):
        self.training = False
        return self

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, blk in enumerate(self.blocks):
            out += [(f"block{i}.kernel", blk.kernel), (f"block{i}.bias", blk.bias),
                    (f"block{i}.gamma", blk.gamma), (f"block{i}.beta", blk.beta)]
        return out + [("head.weight", self.head_w), ("head.bias", self.head_b)]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Every stored array (parameters then running statistics) in a fixed order."""
        out = [(n, t.data) for n, t in self.named_parameters()]
        for i, blk in enumerate(self.blocks):
            out += [(f"block{i}.running_mean", blk.bn.running_mean), (f"block{i}.running_var", blk.bn.running_var)]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        for name, arr in arrays.items():
            if name in params:
                if params[name].shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {params[name].shape}")
                params[name].data = np.array(arr, dtype=np.float64)
                continue
            blk_name, _, field = name.partition(".")
            blk = self.blocks[int(blk_name[len("block"):])]
            if field not in ("running_mean", "running_var"):
                raise KeyError(name)
            if getattr(blk.bn, field).shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            setattr(blk.bn, field, np.array(arr, dtype=np.float64))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: a.copy() for n, a in self.state()}

    def _check_input(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected a (B, {self.in_channels}, T) batch, got shape {x.shape}")
        if x.shape[2] < min_length():
            raise ValueError(f"series length {x.shape[2]} too short: three pooling stages need T >= {min_length()}")

    def logits(self, x, rng: np.random.Generator | None = None, frozen: bool = False,
               training: bool | None = None) -> Tensor:
        training = self.training if training is None else training
        x = ad.as_tensor(x)
        self._check_input(x.data)
        h = x
        for blk in self.blocks:
            h = blk(h, training, frozen)
        h = ad.global_avg_pool(h)
        if training and self.dropout > 0:
            if rng is None:
                raise ValueError("training-mode forward with dropout needs an rng")
            h = ad.dropout(h, self.dropout, rng)
        p = _frozen if frozen else _same
        return ad.linear(h, p(self.head_w), p(self.head_b))

    def forward(self, x, rng=None, frozen: bool = False, training: bool | None = None) -> Tensor:
        return ad.softmax(self.logits(x, rng, frozen, training))

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        """Inference-mode probabilities for a ``(B, d, T)`` array."""
        return self.forward(np.asarray(batch, dtype=np.float64), frozen=True, training=False).data

    def predict_proba_series(self, X: np.ndarray) -> np.ndarray:
        """Same as :meth:`predict_proba` but for ``(T, d)`` or ``(n, T, d)`` series."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        return self.predict_proba(to_batch(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba_series(X).argmax(axis=1)

    def target_probability(self, series: np.ndarray, target: int) -> tuple[float, np.ndarray, np.ndarray]:
        """p(target | series) and its gradient w.r.t. the ``(T, d)`` series, parameters frozen.

        Also returns the full probability vector.
        """
        x = Tensor(to_batch(np.asarray(series, dtype=np.float64)[None]), requires_grad=True)
        probs = self.forward(x, frozen=True, training=False)
        p = probs[0, target]
        p.backward()
        return float(p.data), x.grad[0].T.copy(), probs.data[0].copy()


def to_batch(X: np.ndarray) -> np.ndarray:
    """(n, T, d) series stack -> (n, d, T) network layout."""
    return np.ascontiguousarray(np.transpose(X, (0, 2, 1)))

