import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptdirs.errors import (
    DegenerateData,
    DegenerateDataWarning,
    DimMismatch,
    EmptyGradients,
    InsufficientNegatives,
)
from conceptdirs.tcav import (
    DEFAULT_ITERATIONS,
    DEFAULT_L2,
    DEFAULT_STEP,
    CavModel,
    fit_cav,
    tcav_runs,
    tcav_score,
)
from conceptdirs.tensor_io import LatentMatrix

from conftest import random_unit


def _separable(rng, n=100, d=8):
    """Offsets of at least 1 along a hidden normal, isotropic noise orthogonal to it."""
    normal = random_unit(rng, 1, d)[0]

    def side(sign):
        noise = 0.5 * rng.standard_normal((n, d))
        noise -= np.outer(noise @ normal, normal)
        return noise + sign * (1.0 + np.abs(rng.standard_normal((n, 1)))) * normal

    return side(1.0), side(-1.0), normal


def test_defaults():
    assert (DEFAULT_ITERATIONS, DEFAULT_STEP, DEFAULT_L2) == (500, 0.1, 1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_separable_recovers_normal(seed):
    rng = np.random.default_rng(seed)
    pos, neg, normal = _separable(rng)
    # the construction really is separable with a margin
    assert (pos @ normal).min() >= 1.0 - 1e-12 and (neg @ normal).max() <= -1.0 + 1e-12
    cav = fit_cav(LatentMatrix([f"p{i}" for i in range(len(pos))], pos), neg)
    assert cav.v @ normal > 0.99
    assert cav.train_accuracy == 1.0
    assert abs(np.linalg.norm(cav.v) - 1.0) <= 1e-6


def test_identical_sets_warn():
    X = np.random.default_rng(0).standard_normal((30, 5))
    with pytest.warns(DegenerateDataWarning):
        cav = fit_cav(X, X)
    assert cav.train_accuracy == pytest.approx(0.5, abs=0.1)
    assert abs(np.linalg.norm(cav.v) - 1.0) <= 1e-6


def test_all_identical_activations_error():
    with pytest.raises(DegenerateData):
        fit_cav(np.ones((4, 3)), np.ones((4, 3)))


def test_resnet_width_accepted(rng):
    pos = rng.standard_normal((20, 2048)) + 0.5
    neg = rng.standard_normal((20, 2048))
    cav = fit_cav(pos, neg)
    assert cav.v.shape == (2048,)


def test_fit_errors(rng):
    with pytest.raises(DimMismatch):
        fit_cav(rng.standard_normal((3, 4)), rng.standard_normal((3, 5)))
    with pytest.raises(DegenerateData):
        fit_cav(np.zeros((0, 4)), rng.standard_normal((3, 4)))


def test_fit_deterministic(rng):
    pos, neg, _ = _separable(rng)
    a, b = fit_cav(pos, neg, seed=5), fit_cav(pos, neg, seed=5)
    assert a.v.tobytes() == b.v.tobytes() and a.train_accuracy == b.train_accuracy


def test_score_aligned_and_orthogonal():
    v = np.array([0.6, 0.8, 0.0])
    cav = CavModel(v, 1.0, 0)
    assert tcav_score(np.tile(v, (5, 1)), cav) == 1.0
    assert tcav_score(np.tile([0.0, 0.0, 1.0], (5, 1)), cav) == 0.0
    assert tcav_score([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], cav) == 0.5


def test_score_errors():
    cav = CavModel([1.0, 0.0], 1.0, 0)
    with pytest.raises(EmptyGradients):
        tcav_score(np.zeros((0, 2)), cav)
    with pytest.raises(DimMismatch):
        tcav_score(np.ones((2, 3)), cav)
    with pytest.raises(ValueError):
        CavModel([1.0, 1.0], 1.0, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 6))
def test_score_scale_invariance_and_negation(seed, n, d):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    if seed % 3 == 0:
        g[: n // 2] = 0.0  # exact zero products count for neither sign
    v = random_unit(rng, 1, d)[0]
    cav, neg = CavModel(v, 1.0, 0), CavModel(-v, 1.0, 0)
    s = tcav_score(g, cav)
    assert tcav_score(g * rng.uniform(0.1, 10, size=(n, 1)), cav) == s
    total = s + tcav_score(g, neg)
    assert total <= 1.0 + 1e-15
    if np.all(g @ v != 0):
        assert total == pytest.approx(1.0, abs=1e-15)


def _aligned_setup(rng):
    d = 6
    shift = np.zeros(d)
    shift[0] = 3.0
    pos = rng.standard_normal((20, d)) + shift
    pool = rng.standard_normal((80, d))
    grads = rng.standard_normal((15, d)) * 0.01 + shift
    return pos, pool, grads


def test_runs_aligned():
    pos, pool, grads = _aligned_setup(np.random.default_rng(3))
    res = tcav_runs(pos, pool, grads, runs=10, seed=7)
    assert res.mean == 1.0 and res.std == 0.0
    assert res.per_run == [1.0] * 10


def test_single_run_std_zero():
    pos, pool, grads = _aligned_setup(np.random.default_rng(4))
    assert tcav_runs(pos, pool, grads, runs=1, seed=0).std == 0.0


def test_runs_sample_std_oracle(rng):
    pos = rng.standard_normal((10, 4)) + 0.2
    pool = rng.standard_normal((60, 4))
    grads = rng.standard_normal((25, 4))
    res = tcav_runs(pos, pool, grads, runs=6, seed=1)
    m = sum(res.per_run) / 6
    std = (sum((x - m) ** 2 for x in res.per_run) / 5) ** 0.5
    assert res.mean == pytest.approx(m, abs=1e-15)
    assert res.std == pytest.approx(std, abs=1e-12)


def test_runs_deterministic_across_workers(rng):
    pos = rng.standard_normal((10, 4)) + 0.2
    pool = rng.standard_normal((60, 4))
    grads = rng.standard_normal((25, 4))
    a = tcav_runs(pos, pool, grads, runs=5, seed=9)
    b = tcav_runs(pos, pool, grads, runs=5, seed=9, workers=4)
    assert a == b


def test_insufficient_negatives(rng):
    with pytest.raises(InsufficientNegatives):
        tcav_runs(rng.standard_normal((5, 3)), rng.standard_normal((4, 3)), rng.standard_normal((2, 3)))
    # C(4, 3) = 4 distinct subsets cannot serve 5 runs
    with pytest.raises(InsufficientNegatives):
        tcav_runs(rng.standard_normal((3, 3)), rng.standard_normal((4, 3)), rng.standard_normal((2, 3)), runs=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        res = tcav_runs(rng.standard_normal((3, 3)), rng.standard_normal((4, 3)), rng.standard_normal((2, 3)), runs=4)
    assert len(res.per_run) == 4
