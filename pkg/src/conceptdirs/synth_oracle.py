"""Synthetic data with planted directions, and brute-force reference implementations.

The references here are deliberately naive (plain loops, explicit
enumeration) so they share no code path with the fast implementations they
check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InstanceTooLarge, KExceedsD, KMismatch, ShapeMismatch
from .latent_diff import UnitMatrix
from .sphere_cluster import SILHOUETTE_EPS, DirectionSet
from .tensor_io import LatentMatrix, PairEntry, PairManifest, write_json, write_latent_matrix, write_pair_manifest

EXHAUSTIVE_LIMIT = 10**7


@dataclass(frozen=True)
class PlantedSpec:
    k_true: int
    d: int
    n: int
    noise_sigma: float
    seed: int = 0
    mixing: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.k_true < 1 or self.n < 1 or self.d < 1:
            raise ValueError("k_true, d and n must be positive")
        if self.k_true > self.d:
            raise KExceedsD(f"cannot plant {self.k_true} orthonormal directions in d={self.d}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        mixing = self.mixing
        if mixing is None:
            mixing = tuple([1.0 / self.k_true] * self.k_true)
        mixing = tuple(float(p) for p in mixing)
        if len(mixing) != self.k_true or min(mixing) < 0 or abs(math.fsum(mixing) - 1.0) > 1e-9:
            raise ValueError(f"mixing must be {self.k_true} non-negative proportions summing to 1")
        object.__setattr__(self, "mixing", mixing)


def allocate_counts(n: int, proportions) -> list[int]:
    """Largest-remainder split of n; ties in the remainder go to the lower index."""
    quotas = [n * p for p in proportions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def gram_schmidt(vectors: np.ndarray) -> np.ndarray:
    """Orthonormalise rows in order (modified Gram-Schmidt)."""
    basis = []
    for v in np.asarray(vectors, dtype=np.float64):
        w = v.copy()
        for u in basis:
            w -= (w @ u) * u
        norm = np.linalg.norm(w)
        if norm < 1e-10:
            raise ShapeMismatch("vectors are linearly dependent")
        basis.append(w / norm)
    return np.array(basis)


def generate_planted(spec: PlantedSpec) -> tuple[UnitMatrix, DirectionSet, np.ndarray]:
    """Sample ``normalize(direction + N(0, sigma^2 I))`` around orthonormal planted directions.

    Labels are laid out in blocks: all samples of direction 0, then 1, etc.
    """
    rng = np.random.default_rng(spec.seed)
    dirs = gram_schmidt(rng.standard_normal((spec.k_true, spec.d)))
    counts = allocate_counts(spec.n, spec.mixing)
    labels = np.repeat(np.arange(spec.k_true), counts)
    if spec.noise_sigma == 0:
        points = dirs[labels].copy()
    else:
        raw = dirs[labels] + spec.noise_sigma * rng.standard_normal((spec.n, spec.d))
        points = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    ids = [f"p{i}" for i in range(spec.n)]
    truth = DirectionSet(
        "planted",
        dirs,
        {"seed": spec.seed, "n_samples": spec.n, "noise_sigma": spec.noise_sigma},
    )
    return UnitMatrix(tuple(ids), points, np.ones(spec.n)), truth, labels


def _rows(points):
    data = points.data if isinstance(points, UnitMatrix) else points
    return [list(map(float, row)) for row in np.asarray(data, dtype=np.float64)]


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def exhaustive_kmeans(points, k: int) -> tuple[float, np.ndarray]:
    """Global optimum of the spherical k-means objective by enumerating every surjective labelling.

    Among labellings with the same objective the first in lexicographic order is kept.
    """
    rows = _rows(points)
    n = len(rows)
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if k**n > EXHAUSTIVE_LIMIT:
        raise InstanceTooLarge(f"{k}^{n} labellings exceed the enumeration limit")
    d = len(rows[0])
    best_obj, best_labels = -math.inf, None
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        obj = 0.0
        for j in range(k):
            members = [rows[i] for i in range(n) if labels[i] == j]
            mean = [sum(m[c] for m in members) / len(members) for c in range(d)]
            norm = math.sqrt(_dot(mean, mean))
            if norm == 0.0:
                continue  # any unit center gives zero for a cluster summing to 0
            center = [c / norm for c in mean]
            obj += sum(_dot(m, center) for m in members)
        if obj > best_obj:
            best_obj, best_labels = obj, labels
    return best_obj, np.array(best_labels)


def silhouette_reference(points, labels) -> float:
    """Double-loop cosine silhouette using the same conventions as the fast version."""
    rows = _rows(points)
    labels = [int(l) for l in labels]
    n = len(rows)
    clusters = sorted(set(labels))
    total = 0.0
    for i in range(n):
        own = labels[i]
        same = [j for j in range(n) if labels[j] == own and j != i]
        if not same:
            continue
        a = sum(max(0.0, 1.0 - _dot(rows[i], rows[j])) for j in same) / len(same)
        b = math.inf
        for c in clusters:
            if c == own:
                continue
            others = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(max(0.0, 1.0 - _dot(rows[i], rows[j])) for j in others) / len(others))
        top = max(a, b)
        if top > SILHOUETTE_EPS:
            total += (b - a) / top
    return total / n


def match_directions(recovered, truth) -> tuple[list[int], float]:
    """Greedy max-cosine matching without replacement.

    Returns ``perm`` with ``perm[i]`` the truth row matched to recovered row
    ``i``, and the smallest matched cosine. Greedy, so only approximately
    optimal when directions are far from orthogonal.
    """
    R = recovered.directions if isinstance(recovered, DirectionSet) else np.asarray(recovered, dtype=np.float64)
    T = truth.directions if isinstance(truth, DirectionSet) else np.asarray(truth, dtype=np.float64)
    if R.shape != T.shape:
        raise KMismatch(f"recovered {R.shape} vs truth {T.shape}")
    k = R.shape[0]
    cos = R @ T.T
    pairs = sorted(((-cos[i, j], i, j) for i in range(k) for j in range(k)))
    perm = [-1] * k
    used = set()
    for _, i, j in pairs:
        if perm[i] == -1 and j not in used:
            perm[i] = j
            used.add(j)
    return perm, float(min(cos[i, perm[i]] for i in range(k)))


def write_synthetic_workspace(
    directory,
    spec: PlantedSpec,
    n_test: int = 200,
    alphas=(0.5, 1.0, 2.0, 4.0),
    ablation_k=(4, 9),
    target: str = "target",
):
    """Write factual/counterfactual latents, manifest, test latents, scorer and config.

    Counterfactuals are factual latents shifted by a random positive multiple
    of a planted sample, so the unit differences reproduce ``generate_planted``
    up to float32 storage. Returns the path of ``config.json``.
    """
    directory = Path(directory)
    points, truth, _ = generate_planted(spec)
    rng = np.random.default_rng([spec.seed, 1])
    factual = rng.standard_normal((spec.n, spec.d))
    scale = rng.uniform(0.5, 2.0, size=(spec.n, 1))
    counterfactual = factual + scale * points.data
    others = ["other_a", "other_b"]
    f_ids = [f"f{i}" for i in range(spec.n)]
    cf_ids = [f"cf{i}" for i in range(spec.n)]
    write_latent_matrix(LatentMatrix(f_ids, factual), directory / "factual.cdlc")
    write_latent_matrix(LatentMatrix(cf_ids, counterfactual), directory / "counterfactual.cdlc")
    entries = [PairEntry(f, c, others[i % 2], target) for i, (f, c) in enumerate(zip(f_ids, cf_ids))]
    write_pair_manifest(PairManifest(tuple(entries)), directory / "pairs.tsv")
    write_latent_matrix(
        LatentMatrix([f"t{i}" for i in range(n_test)], rng.standard_normal((n_test, spec.d))),
        directory / "test.cdlc",
    )

    # competing classes share planted directions, so whether the target
    # probability rises depends on the sample, not only on the direction
    dirs = truth.directions
    coef = np.zeros((3, spec.k_true))
    coef[0, :3] = [1.5, 1.0, -1.0][: spec.k_true]
    coef[1, :1] = 1.8
    coef[2, 1:2] = 1.2
    noise = rng.standard_normal((3, spec.d)) / np.sqrt(spec.d)
    weights = coef @ dirs + np.array([[0.2], [0.5], [0.5]]) * noise
    write_latent_matrix(LatentMatrix([target] + others, weights), directory / "scorer.cdlc")

    config = {
        "factual": "factual.cdlc",
        "counterfactual": "counterfactual.cdlc",
        "manifest": "pairs.tsv",
        "test_latents": "test.cdlc",
        "scorer": {"type": "linear", "weights": "scorer.cdlc"},
        "alphas": list(alphas),
        "k_range": [2, 9],
        "ablation_k": list(ablation_k) if ablation_k else None,
        "seed": spec.seed,
        "output_dir": "out",
    }
    path = directory / "config.json"
    write_json(path, config)
    return path
