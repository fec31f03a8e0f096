import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptdirs.errors import DimMismatch, IdMismatch, ShapeMismatch, UnknownTarget
from conceptdirs.tensor_io import LatentMatrix, read_prob_table, write_prob_table
from conceptdirs.traversal import (
    AlphaSweep,
    ProbTable,
    apply_direction,
    best_alpha,
    linear_softmax_scorer,
    success_rate,
)

from conftest import random_unit


def _latents(data):
    data = np.asarray(data, dtype=np.float64)
    return LatentMatrix([f"s{i}" for i in range(len(data))], data)


def _softmax_oracle(W, b, z):
    logits = [sum(W[c][j] * z[j] for j in range(len(z))) + b[c] for c in range(len(W))]
    top = max(logits)
    exps = [math.exp(v - top) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def test_alpha_zero_is_identity(rng):
    z = _latents(rng.standard_normal((4, 3)))
    out = apply_direction(z, [0.0, 0.0, 1.0], 0.0)
    assert out == z


def test_apply_hand_example():
    out = apply_direction(_latents([[1.0, 0.0]]), [0.0, 1.0], 2.0)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0]])
    assert out.ids == ("s0",)


def test_alpha_sweep_table_values(rng):
    z = _latents(rng.standard_normal((3, 8)))
    c = random_unit(rng, 1, 8)[0]
    sweep = AlphaSweep.parse("40,45,50,55,60")
    outs = [apply_direction(z, c, a) for a in sweep]
    assert len(outs) == 5
    for a, out in zip(sweep, outs):
        np.testing.assert_allclose(out.data, z.data + a * c, rtol=1e-6, atol=1e-4)


def test_alpha_sweep_validation():
    with pytest.raises(ValueError):
        AlphaSweep(())
    with pytest.raises(ValueError):
        AlphaSweep((1.0, 1.0))


def test_apply_errors():
    z = _latents([[1.0, 2.0]])
    with pytest.raises(DimMismatch):
        apply_direction(z, [1.0, 0.0, 0.0], 1.0)
    with pytest.raises(ShapeMismatch):
        apply_direction(z, [1.0, 1.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(-64, 64), min_size=4, max_size=4),
    st.integers(-16, 16),
    st.integers(-16, 16),
    st.sampled_from([0, 1, 2, 3]),
)
def test_additivity_exact_on_representable_values(row, a1, a2, axis):
    # quarter-integers and axis directions keep every intermediate exact in float32
    z = _latents([[v / 4 for v in row]])
    c = np.zeros(4)
    c[axis] = 1.0
    once = apply_direction(z, c, (a1 + a2) / 4)
    twice = apply_direction(apply_direction(z, c, a1 / 4), c, a2 / 4)
    assert once == twice


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
def test_additivity_general_within_float32(seed, a1, a2):
    rng = np.random.default_rng(seed)
    z = _latents(rng.standard_normal((3, 6)))
    c = random_unit(rng, 1, 6)[0]
    once = apply_direction(z, c, a1 + a2)
    twice = apply_direction(apply_direction(z, c, a1), c, a2)
    np.testing.assert_allclose(once.data, twice.data, rtol=0, atol=1e-5)


def test_uniform_scorer():
    probs = linear_softmax_scorer(np.zeros((3, 5)), np.zeros(3))(_latents(np.ones((4, 5))))
    np.testing.assert_allclose(probs.probs, 1 / 3, atol=1e-15)


def test_saturated_scorer():
    probs = linear_softmax_scorer([[1.0], [0.0]], [50.0, 0.0])(_latents([[0.0]]))
    assert probs.probs[0, 0] > 0.999


def test_scorer_extreme_logits_finite():
    probs = linear_softmax_scorer([[1e6], [-1e6]], [0.0, 0.0])(_latents([[3.0], [-3.0]]))
    assert np.isfinite(probs.probs).all()
    np.testing.assert_allclose(probs.probs.sum(axis=1), 1.0, atol=1e-12)


def test_scorer_matches_direct_exponentiation(rng):
    W = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    z = _latents(rng.standard_normal((10, 6)))
    probs = linear_softmax_scorer(W, b)(z)
    np.testing.assert_allclose(probs.probs.sum(axis=1), 1.0, atol=1e-6)
    for i in range(10):
        expected = _softmax_oracle(W.tolist(), b.tolist(), z.data[i].astype(np.float64).tolist())
        np.testing.assert_allclose(probs.probs[i], expected, rtol=0, atol=1e-9)


def test_sr_no_change_is_zero(rng):
    p = linear_softmax_scorer(rng.standard_normal((3, 4)))(_latents(rng.standard_normal((7, 4))))
    assert success_rate(p, p, "0") == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_sr_one_along_target_direction(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((4, 10))
    scorer = linear_softmax_scorer(W, rng.standard_normal(4), ["t", "a", "b", "c"])
    c = W[0] - W[1:].mean(axis=0)
    c /= np.linalg.norm(c)
    z = _latents(rng.standard_normal((100, 10)))
    base = scorer(z)
    moved = scorer(apply_direction(z, c, 1.0))
    # brute-force per-sample check that the target probability rose
    expected = np.mean(moved.column("t") > base.column("t"))
    assert success_rate(base, moved, "t") == expected
    if np.all((W[0] - W[1:]) @ c > 0):
        assert expected == 1.0


def test_sr_hand_counts():
    base = ProbTable(("a", "b", "c"), ("x", "y"), [[0.5, 0.5], [0.3, 0.7], [0.9, 0.1]])
    moved = ProbTable(("a", "b", "c"), ("x", "y"), [[0.6, 0.4], [0.3, 0.7], [0.2, 0.8]])
    assert success_rate(base, moved, "x") == pytest.approx(1 / 3)
    assert success_rate(base, moved, "y") == pytest.approx(1 / 3)


def test_sr_errors():
    base = ProbTable(("a",), ("x", "y"), [[0.5, 0.5]])
    with pytest.raises(IdMismatch):
        success_rate(base, ProbTable(("b",), ("x", "y"), [[0.5, 0.5]]), "x")
    with pytest.raises(IdMismatch):
        success_rate(base, ProbTable(("a",), ("y", "x"), [[0.5, 0.5]]), "x")
    with pytest.raises(UnknownTarget):
        success_rate(base, base, "z")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 5))
def test_sr_invariant_to_nontarget_permutation(seed, C):
    rng = np.random.default_rng(seed)
    classes = [f"k{i}" for i in range(C)]
    p = rng.dirichlet(np.ones(C), size=20)
    q = rng.dirichlet(np.ones(C), size=20)
    ids = [f"s{i}" for i in range(20)]
    sr = success_rate(ProbTable(ids, classes, p), ProbTable(ids, classes, q), "k0")
    perm = [0] + list(rng.permutation(np.arange(1, C)))
    sr2 = success_rate(
        ProbTable(ids, [classes[i] for i in perm], p[:, perm]),
        ProbTable(ids, [classes[i] for i in perm], q[:, perm]),
        "k0",
    )
    assert sr == sr2 and 0.0 <= sr <= 1.0


def test_prob_table_validation():
    with pytest.raises(ShapeMismatch):
        ProbTable(("a",), ("x", "y"), [[0.5, 0.6]])
    with pytest.raises(ShapeMismatch):
        ProbTable(("a",), ("x", "y"), [[1.5, -0.5]])


def test_best_alpha_prefers_smaller_on_tie():
    assert best_alpha([(40, 0.6), (45, 0.7), (50, 0.7), (55, 0.5)]) == (45, 0.7)
    with pytest.raises(ValueError):
        best_alpha([])


def test_prob_table_file_roundtrip(tmp_path, rng):
    p = linear_softmax_scorer(rng.standard_normal((3, 4)), classes=["a", "b", "c"])(_latents(rng.standard_normal((5, 4))))
    write_prob_table(p, tmp_path / "p.tsv")
    assert read_prob_table(tmp_path / "p.tsv") == p
