import numpy as np
import pytest

from cfx.cfe import CfeConfig, TargetError, composite_loss, generate, pick_target, target_neighbors
from cfx.nn import Classifier, to_batch
from gradcheck import central_diff, rel_err
from test_nn import _signature, _warm


def toy_split(rng, n=20, T=16, d=1):
    X = rng.normal(size=(n, T, d))
    y = np.arange(n) % 2
    return X, y


def brute_neighbors(X, target, X_train, y_train, k):
    rows = [(float(np.sqrt(np.sum((X_train[i] - X) ** 2))), i) for i in range(len(y_train)) if y_train[i] == target]
    return [i for _, i in sorted(rows)[:k]]


def test_neighbors_match_sort_oracle(rng):
    X_train, y_train = toy_split(rng)
    for _ in range(10):
        X = rng.normal(size=(16, 1))
        assert target_neighbors(X, 1, X_train, y_train, 3).tolist() == brute_neighbors(X, 1, X_train, y_train, 3)


def test_neighbors_exhaustive_and_self(rng):
    X_train, y_train = toy_split(rng)
    ids = target_neighbors(X_train[4], 0, X_train, y_train, 10)
    assert sorted(ids.tolist()) == list(range(0, 20, 2))
    assert target_neighbors(X_train[4], 0, X_train, y_train, 1).tolist() == [4]


def test_neighbors_tie_lower_index():
    X_train = np.zeros((4, 3, 1))
    y_train = np.array([1, 1, 0, 1])
    assert target_neighbors(np.ones((3, 1)), 1, X_train, y_train, 2).tolist() == [0, 1]


def test_neighbors_too_few(rng):
    X_train, y_train = toy_split(rng, n=6)
    with pytest.raises(TargetError, match="k <= 3"):
        target_neighbors(X_train[0], 1, X_train, y_train, 4)


def test_neighbors_dtw_metric(rng):
    from cfx.warp import dtw_distance
    X_train, y_train = toy_split(rng)
    X = rng.normal(size=(16, 1))
    ids = target_neighbors(X, 0, X_train, y_train, 3, metric="dtw")
    pool = sorted((dtw_distance(X, X_train[i]), i) for i in range(0, 20, 2))
    assert ids.tolist() == [i for _, i in pool[:3]]


def _probe_model(rng, c=2, T=16, d=1, seed=0):
    m = _warm(Classifier(d, c, seed=seed), rng, d, T)
    m.head_w.data *= 3.0
    return m


def test_zero_perturbation_lambda_zero(rng):
    m = _probe_model(rng)
    X = rng.normal(size=(16, 1))
    terms = composite_loss(X, X, rng.normal(size=(2, 16, 1)), m, 1, CfeConfig(lam=0.0))
    assert terms.total == 0.0 and terms.prox == 0.0 and terms.sparse == 0.0


def test_hinge_inactive(rng):
    m = _probe_model(rng)
    X = rng.normal(size=(16, 1))
    p = m.predict_proba_series(X)[0]
    target = int(p.argmax())
    cfg = CfeConfig(tau=float(p[target]) - 0.05)
    terms = composite_loss(X, X, rng.normal(size=(3, 16, 1)), m, target, cfg)
    assert terms.valid == 0.0
    assert terms.total == terms.dtw


def test_composite_loss_values(rng):
    m = _probe_model(rng)
    X = rng.normal(size=(16, 1))
    delta = rng.normal(size=(16, 1))
    nbrs = rng.normal(size=(2, 16, 1))
    cfg = CfeConfig(lam=2.0, tau=0.9, gamma=0.5)
    terms = composite_loss(X + delta, X, nbrs, m, 0, cfg)
    from cfx.warp import soft_dtw
    p = m.predict_proba_series(X + delta)[0, 0]
    assert terms.prox == pytest.approx(np.sum(delta ** 2) / 16)
    assert terms.sparse == pytest.approx(np.sum(np.abs(delta)) / 16)
    assert terms.valid == pytest.approx(max(0.0, 0.9 - p))
    assert terms.dtw == pytest.approx(np.mean([soft_dtw(X + delta, Y, 0.5)[0] for Y in nbrs]))
    assert terms.total == pytest.approx(terms.prox + terms.sparse + 2.0 * (terms.valid + terms.dtw))


def test_composite_loss_errors(rng):
    m = _probe_model(rng)
    X = rng.normal(size=(16, 1))
    with pytest.raises(ValueError, match="k >= 1"):
        composite_loss(X, X, np.zeros((0, 16, 1)), m, 0, CfeConfig())
    with pytest.raises(ValueError, match="differs"):
        composite_loss(X[:8], X, rng.normal(size=(1, 16, 1)), m, 0, CfeConfig())


def composite_grad_error(seed):
    """Max relative error of the composite-loss gradient against central differences, off kinks."""
    rng = np.random.default_rng(seed)
    m = _probe_model(rng, seed=seed)
    X = rng.normal(size=(16, 1))
    delta = rng.normal(scale=0.5, size=(16, 1))
    delta = np.where(np.abs(delta) < 1e-2, 0.05, delta)  # off the l1 kink
    Xc = X + delta
    nbrs = rng.normal(size=(2, 16, 1))
    target = int(rng.integers(2))
    p = m.predict_proba_series(Xc)[0, target]
    tau = min(1.0, p + 0.2) if seed % 2 == 0 else max(1e-3, p - 0.2)  # hinge active / inactive, off the kink
    cfg = CfeConfig(lam=1.0 + seed % 3, k=2, gamma=1.0, tau=tau)
    terms = composite_loss(Xc, X, nbrs, m, target, cfg)
    h = 1e-5
    f = lambda Z: composite_loss(Z, X, nbrs, m, target, cfg).total  # noqa: E731
    coords = np.arange(Xc.size)
    num = central_diff(f, Xc.copy(), coords, h)
    base = _signature(m, to_batch(Xc[None]))
    keep = []
    for c in coords:
        ok = True
        for s in (h, -h):
            Z = Xc.copy()
            Z.reshape(-1)[c] += s
            ok &= np.array_equal(_signature(m, to_batch(Z[None])), base)
        keep.append(ok)
    keep = np.array(keep)
    return rel_err(terms.grad.reshape(-1)[keep], num[keep]).max(), int(keep.sum())


@pytest.mark.parametrize("seed", range(20))
def test_composite_gradient_fd(seed):
    err, n_checked = composite_grad_error(seed)
    assert n_checked >= 12
    assert err < 1e-3


def test_pick_target_second_and_fixed(rng):
    m = Classifier(1, 2, seed=0)
    X = rng.normal(size=(16, 1))
    pred = int(m.predict(X)[0])
    assert pick_target(X, m, "second") == 1 - pred
    assert pick_target(X, m, f"fixed:{m.labels[1 - pred]}") == 1 - pred
    with pytest.raises(TargetError, match="equals the predicted"):
        pick_target(X, m, f"fixed:{m.labels[pred]}")
    with pytest.raises(ValueError, match="unknown target policy"):
        pick_target(X, m, "third")


class FixedProbs:
    """Stand-in classifier returning a fixed probability vector."""

    labels = ("a", "b", "c")
    n_classes = 3

    def __init__(self, p):
        self.p = np.asarray(p)

    def predict_proba_series(self, X):
        return self.p[None]


def test_pick_target_readoff():
    assert pick_target(np.zeros((8, 1)), FixedProbs([0.7, 0.2, 0.1]), "second") == 1
    assert pick_target(np.zeros((8, 1)), FixedProbs([0.1, 0.2, 0.7]), "second") == 1
    assert pick_target(np.zeros((8, 1)), FixedProbs([0.3, 0.05, 0.65]), "second") == 0


def test_pick_target_argsort_oracle(rng):
    m = _probe_model(rng, c=3)
    for _ in range(20):
        X = rng.normal(size=(16, 1))
        p = m.predict_proba_series(X)[0]
        assert pick_target(X, m, "second") == sorted(range(3), key=lambda i: -p[i])[1]


def test_trivial_input_returned_unchanged(rng):
    m = _probe_model(rng)
    X_train, y_train = toy_split(rng)
    X = rng.normal(size=(16, 1))
    pred = int(m.predict(X)[0])
    res = generate(X, pred, m, X_train, y_train, CfeConfig(k=2))
    assert res.trivial and res.valid
    assert np.array_equal(res.counterfactual, X)


def _short_run(rng, m, cfg, init=None):
    X_train, y_train = toy_split(rng)
    X = rng.normal(size=(16, 1))
    target = 1 - int(m.predict(X)[0])
    return generate(X, target, m, X_train, y_train, cfg, init=init), X_train


def test_result_invariants(rng):
    m = _probe_model(rng)
    res, X_train = _short_run(rng, m, CfeConfig(k=3, iterations=40, lr=0.1))
    assert res.counterfactual.shape == res.original.shape
    assert res.valid == (int(m.predict(res.counterfactual)[0]) == res.target)
    assert res.trajectory.shape == (41, 5)
    assert len(res.neighbor_ids) == 3
    if res.valid and res.target_probability >= 0.5:
        assert res.trajectory[res.best_iteration, 2] == 0.0


def test_neighbors_fixed_for_whole_run(rng):
    # the recorded neighbors are those of the original input, not of the final counterfactual
    m = _probe_model(rng)
    res, X_train = _short_run(rng, m, CfeConfig(k=3, iterations=30))
    y_train = np.arange(20) % 2
    assert res.neighbor_ids.tolist() == target_neighbors(res.original, res.target, X_train, y_train, 3).tolist()


def test_generate_deterministic(rng):
    m = _probe_model(rng)
    state = np.random.default_rng(5)
    a, _ = _short_run(np.random.default_rng(1), m, CfeConfig(k=2, iterations=25))
    b, _ = _short_run(np.random.default_rng(1), m, CfeConfig(k=2, iterations=25))
    assert a.counterfactual.tobytes() == b.counterfactual.tobytes()
    assert a.trajectory.tobytes() == b.trajectory.tobytes()
    assert state is not None


def test_classifier_untouched(rng):
    m = _probe_model(rng)
    before = m.snapshot()
    _short_run(rng, m, CfeConfig(k=2, iterations=10))
    after = m.snapshot()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_lambda_zero_never_increases_loss():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = _probe_model(rng, seed=seed)
        res, _ = _short_run(rng, m, CfeConfig(lam=0.0, tau=1.0, k=2, iterations=50))
        assert res.trajectory[-1, 4] <= res.trajectory[0, 4]


def test_lambda_zero_descends_from_perturbed_start():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = _probe_model(rng, seed=seed)
        X_train, y_train = toy_split(rng)
        X = rng.normal(size=(16, 1))
        target = 1 - int(m.predict(X)[0])
        res = generate(X, target, m, X_train, y_train, CfeConfig(lam=0.0, tau=1.0, k=2, iterations=50),
                       init=X + rng.normal(size=X.shape))
        wins += res.trajectory[-1, 4] < res.trajectory[0, 4]
    assert wins >= 9


@pytest.mark.slow
def test_cbf_cylinders_to_bell(cbf_desk, cbf_model):
    model, _ = cbf_model
    cyl, bell = cbf_desk.labels.index("cylinder"), cbf_desk.labels.index("bell")
    idx = np.flatnonzero(cbf_desk.y_test == cyl)[:50]
    valid = []
    for i in idx:
        x = cbf_desk.X_test[i]
        res = generate(x, bell, model, cbf_desk.X_train, cbf_desk.y_train, CfeConfig())
        valid.append(res.valid)
    assert np.mean(valid) >= 0.95
