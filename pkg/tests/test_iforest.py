import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfx.iforest import EULER, IsolationForest, c_factor, iso_forest_fit, iso_forest_score


def test_c_factor_values():
    assert c_factor(0) == 0.0
    assert c_factor(1) == 0.0
    assert c_factor(2) == 1.0
    assert c_factor(256) == pytest.approx(2 * (math.log(255) + EULER) - 2 * 255 / 256)


def test_single_point_forest():
    forest = iso_forest_fit(np.zeros((1, 8, 1)), seed=3)
    assert forest.depth_limit == 0
    s = forest.score(np.random.default_rng(0).normal(size=(5, 8, 1)))
    assert np.all(s == 0.5)
    assert iso_forest_score(forest, np.zeros((3, 8, 1))) == 0.0


def test_fit_deterministic(rng):
    ref = rng.normal(size=(40, 12, 2))
    a, b = iso_forest_fit(ref, seed=11), iso_forest_fit(ref, seed=11)
    assert all(ta.same_structure(tb) for ta, tb in zip(a.trees, b.trees))
    c = iso_forest_fit(ref, seed=12)
    assert not all(ta.same_structure(tc) for ta, tc in zip(a.trees, c.trees))


def test_subsample_and_depth(rng):
    f = iso_forest_fit(rng.normal(size=(300, 4)), seed=0)
    assert f.psi == 256 and f.depth_limit == 8 and len(f.trees) == 100
    assert all(t.size[0] == 256 for t in f.trees)
    small = iso_forest_fit(rng.normal(size=(37, 4)), seed=0)
    assert small.psi == 37 and small.depth_limit == 6


def test_outlier_versus_centroid(rng):
    sigma = 0.1
    ref = rng.normal(scale=sigma, size=(200, 16, 1))
    forest = iso_forest_fit(ref, seed=1)
    centroid = ref.mean(axis=0)
    far = centroid + 10 * sigma
    s_far, s_mid, s_c = forest.score(np.stack([far, centroid + 5 * sigma, centroid]))
    assert s_far >= 0.5
    assert s_c < s_mid <= s_far
    assert not forest.nominal(far)[0]


def test_self_scoring_mostly_nominal(rng):
    ref = rng.normal(size=(100, 24, 1))
    forest = iso_forest_fit(ref, seed=2)
    assert iso_forest_score(forest, ref) >= 0.9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 30))
def test_score_in_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    forest = IsolationForest(n_trees=10).fit(rng.normal(size=(n, 5)), seed=seed)
    s = forest.score(rng.normal(scale=5, size=(8, 5)))
    assert np.all((s > 0) & (s <= 1))


def test_errors(rng):
    with pytest.raises(ValueError, match="nonempty"):
        iso_forest_fit(np.zeros((0, 4)))
    with pytest.raises(RuntimeError, match="not fitted"):
        IsolationForest().score(np.zeros((1, 4)))
    f = iso_forest_fit(rng.normal(size=(10, 4)))
    with pytest.raises(ValueError, match="features"):
        f.score(np.zeros((1, 5)))
