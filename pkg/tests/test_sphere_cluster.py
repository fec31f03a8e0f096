import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptdirs.errors import SingleCluster, TooFewPoints
from conceptdirs.latent_diff import UnitMatrix
from conceptdirs.sphere_cluster import extract_directions, select_k, silhouette_cosine, spherical_kmeans
from conceptdirs.synth_oracle import PlantedSpec, exhaustive_kmeans, generate_planted, silhouette_reference

from conftest import random_unit

from reference_tables import SELECTED_K as ISIC_K


def _partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(int(l), []).append(i)
    return sorted(tuple(g) for g in groups.values())


def antipodal_caps():
    rng = np.random.default_rng(7)
    caps = []
    for sign in (1.0, -1.0):
        for _ in range(3):
            v = np.array([0.0, 0.0, sign]) + 0.1 * rng.standard_normal(3)
            caps.append(v / np.linalg.norm(v))
    return np.array(caps)


def test_k_equals_n():
    X = random_unit(np.random.default_rng(0), 5, 4)
    m = spherical_kmeans(X, 5, seed=3)
    assert sorted(m.assignments.tolist()) == [0, 1, 2, 3, 4]
    assert m.objective == pytest.approx(5.0, abs=1e-12)
    assert m.silhouette == 0.0  # all singletons


def test_antipodal_caps_match_exhaustive():
    X = antipodal_caps()
    m = spherical_kmeans(X, 2, seed=0)
    best, labels = exhaustive_kmeans(X, 2)
    assert _partition(m.assignments) == _partition(labels) == [(0, 1, 2), (3, 4, 5)]
    assert abs(m.objective - best) <= 1e-9


def test_identical_points_any_split():
    X = np.tile([[0.0, 1.0]], (4, 1))
    best, _ = exhaustive_kmeans(X, 2)
    assert best == 4.0
    m = spherical_kmeans(X, 2, seed=1)
    assert m.objective == pytest.approx(4.0, abs=1e-12)
    assert np.bincount(m.assignments).min() >= 1


def test_empty_cluster_is_refilled():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = spherical_kmeans(X, 3, seed=0, restarts=3)
    assert np.bincount(m.assignments, minlength=3).min() == 1
    assert m.objective == pytest.approx(3.0, abs=1e-12)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        spherical_kmeans(np.eye(3), 4)


def test_model_invariants(rng):
    X = random_unit(rng, 60, 5)
    m = spherical_kmeans(X, 4, seed=11, restarts=5)
    assert np.allclose(np.linalg.norm(m.centers, axis=1), 1.0, atol=1e-6)
    assert np.bincount(m.assignments, minlength=4).min() >= 1
    assert abs(m.recompute_objective(X) - m.objective) <= 1e-9
    for j in range(4):
        mean = X[m.assignments == j].mean(axis=0)
        np.testing.assert_allclose(m.centers[j], mean / np.linalg.norm(mean), atol=1e-6)
    for log in m.objective_logs:
        assert all(b >= a - 1e-12 for a, b in zip(log, log[1:]))
    assert len(m.objective_logs) == m.restarts_used == 5
    assert m.objective == max(log[-1] for log in m.objective_logs)


def test_deterministic_and_thread_independent(rng):
    X = random_unit(rng, 300, 16)
    a = spherical_kmeans(X, 5, seed=42, restarts=6)
    b = spherical_kmeans(X, 5, seed=42, restarts=6)
    c = spherical_kmeans(X, 5, seed=42, restarts=6, workers=4)
    for other in (b, c):
        assert other.assignments.tobytes() == a.assignments.tobytes()
        assert other.centers.tobytes() == a.centers.tobytes()
        assert other.objective == a.objective and other.silhouette == a.silhouette


def test_permutation_equivariance():
    points, _, _ = generate_planted(PlantedSpec(3, 10, 90, 0.05, seed=5))
    X = points.data
    perm = np.random.default_rng(9).permutation(len(X))
    a = spherical_kmeans(X, 3, seed=0)
    b = spherical_kmeans(X[perm], 3, seed=0)
    assert _partition(a.assignments[perm]) == _partition(b.assignments)
    cos = a.centers @ b.centers.T
    assert np.all(cos.max(axis=1) >= 1 - 1e-9)


def test_silhouette_separated_clusters():
    rng = np.random.default_rng(1)
    up = np.array([1.0, 0, 0]) + 0.01 * rng.standard_normal((10, 3))
    down = np.array([-1.0, 0, 0]) + 0.01 * rng.standard_normal((10, 3))
    X = np.vstack([up, down])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    assert silhouette_cosine(X, [0] * 10 + [1] * 10) > 0.9


def test_silhouette_identical_points_is_zero():
    X = np.tile([[0.6, 0.8]], (6, 1))
    assert silhouette_cosine(X, [0, 0, 0, 1, 1, 1]) == 0.0


def test_silhouette_six_points_matches_reference():
    X = antipodal_caps()
    labels = [0, 0, 1, 1, 1, 0]
    assert abs(silhouette_cosine(X, labels) - silhouette_reference(X, labels)) <= 1e-12


def test_silhouette_single_cluster():
    with pytest.raises(SingleCluster):
        silhouette_cosine(np.eye(3), [1, 1, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_silhouette_bounds_and_reference(n, k, seed):
    rng = np.random.default_rng(seed)
    X = random_unit(rng, n, 3)
    labels = rng.integers(0, k, size=n)
    if len(set(labels.tolist())) < 2:
        return
    s = silhouette_cosine(X, labels, block=7)
    assert -1.0 <= s <= 1.0
    assert abs(s - silhouette_reference(X, labels)) <= 1e-12


def test_select_k_planted():
    points, _, _ = generate_planted(PlantedSpec(4, 32, 400, 0.15, seed=3))
    k_star, models = select_k(points, 2, 9, seed=0)
    assert k_star == 4
    assert sorted(models) == list(range(2, 10))


def test_select_k_single_candidate(rng):
    k_star, models = select_k(random_unit(rng, 10, 3), 2, 2)
    assert k_star == 2 and list(models) == [2]


def test_select_k_ablation_range():
    points, _, _ = generate_planted(PlantedSpec(5, 16, 120, 0.3, seed=2))
    _, models = select_k(points, 4, 9, seed=0, restarts=3)
    assert sorted(models) == [4, 5, 6, 7, 8, 9]


def test_select_k_range_checks(rng):
    X = random_unit(rng, 5, 3)
    with pytest.raises(TooFewPoints):
        select_k(X, 2, 5)
    with pytest.raises(ValueError):
        select_k(X, 1, 3)


def test_extract_orthonormal_centers():
    X = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
    m = spherical_kmeans(X, 2, seed=0)
    ds = extract_directions(m, "MEL")
    assert ds.k == 2 and ds.class_label == "MEL"
    np.testing.assert_array_equal(ds.directions, m.centers)
    assert sorted(map(tuple, ds.directions.tolist())) == [(0.0, 1.0, 0.0), (1.0, 0.0, 0.0)]
    assert ds.provenance["n_samples"] == 4 and ds.provenance["seed"] == 0


def test_extract_renormalized_mean():
    m = spherical_kmeans(np.array([[1.0, 0.0], [0.0, 1.0]]), 1, seed=0)
    ds = extract_directions(m, "x")
    np.testing.assert_allclose(ds.directions[0], [2**-0.5, 2**-0.5], atol=1e-15)


@pytest.mark.parametrize("label,k", sorted(ISIC_K.items()))
def test_per_class_k_configuration(label, k):
    points, _, _ = generate_planted(PlantedSpec(k, 24, 12 * k, 0.2, seed=k))
    m = spherical_kmeans(points, k, seed=0, restarts=3)
    ds = extract_directions(m, label, k_source="fixed", k_configured=k)
    assert ds.k == k
    assert ds.provenance["k_configured"] == k and ds.class_label == label
