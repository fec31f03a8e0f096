"""Spherical k-means on unit vectors, cosine silhouette and choice of K.

Similarity is the plain dot product of unit rows; the distance used by
seeding and the silhouette is ``1 - <x, y>``. Every reduction runs in a fixed
order so a given (points, k, seed, restarts, max_iter, tol) always yields a
bit-identical model, however many worker threads are used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMean, ShapeMismatch, SingleCluster, TooFewPoints
from .latent_diff import UnitMatrix

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-9
DEFAULT_K_RANGE = (2, 12)
ABLATION_K_RANGE = (4, 9)
DEGENERATE_NORM = 1e-12
# Points closer than this (in cosine distance) are treated as coincident by the silhouette.
SILHOUETTE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    assignments: np.ndarray
    centers: np.ndarray
    objective: float
    silhouette: float | None
    seed: int
    iterations: int
    restarts_used: int
    objective_logs: tuple[tuple[float, ...], ...] = ()
    best_restart: int = 0

    def __post_init__(self):
        labels = np.array(self.assignments, dtype=np.int64)
        centers = np.array(self.centers, dtype=np.float64)
        if centers.shape[0] != self.k:
            raise ShapeMismatch(f"{centers.shape[0]} centers for k={self.k}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ShapeMismatch("assignment outside [0, k)")
        if np.bincount(labels, minlength=self.k).min(initial=1) == 0:
            raise DegenerateMean("model has an empty cluster")
        if np.abs(np.linalg.norm(centers, axis=1) - 1.0).max(initial=0.0) > 1e-6:
            raise ShapeMismatch("cluster centers must be unit norm")
        labels.setflags(write=False)
        centers.setflags(write=False)
        object.__setattr__(self, "assignments", labels)
        object.__setattr__(self, "centers", centers)

    def recompute_objective(self, points) -> float:
        return _objective(_as_array(points), self.centers, self.assignments)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignments": self.assignments.tolist(),
            "objective": self.objective,
            "silhouette": self.silhouette,
            "seed": self.seed,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "best_restart": self.best_restart,
            "objective_logs": [list(log) for log in self.objective_logs],
        }


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """K unit concept directions for one target class."""

    class_label: str
    directions: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        dirs = np.array(self.directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[0] < 1:
            raise ShapeMismatch("a direction set needs K >= 1 rows")
        if np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max() > 1e-6:
            raise ShapeMismatch("directions must be unit norm")
        dirs.setflags(write=False)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    def metadata(self) -> dict:
        return {"class_label": self.class_label, "k": self.k, "provenance": self.provenance}

    @classmethod
    def from_metadata(cls, directions, meta: dict) -> "DirectionSet":
        return cls(meta["class_label"], directions, meta.get("provenance", {}))


def _as_array(points) -> np.ndarray:
    if isinstance(points, UnitMatrix):
        return points.data
    return np.asarray(points, dtype=np.float64)


def _objective(X, centers, labels) -> float:
    return float(np.einsum("ij,ij->i", X, centers[labels]).sum())


def _cluster_sums(X, labels, k) -> np.ndarray:
    return np.stack([X[labels == j].sum(axis=0) for j in range(k)])


def _seed_centers(X, k, rng) -> np.ndarray:
    """k-means++ seeding; a point is drawn with weight 1 - max cosine to the chosen centers."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = X @ X[chosen[0]]
    for _ in range(1, k):
        weights = np.clip(1.0 - closest, 0.0, None)
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0.0:
            idx = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # every remaining point coincides with a chosen center
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(remaining[rng.integers(remaining.size)])
        chosen.append(idx)
        closest = np.maximum(closest, X @ X[idx])
    return X[chosen].copy()


def _repair(X, labels, sims, k):
    """Fill empty or degenerate clusters with the point least similar to its current center."""
    labels = labels.copy()
    n = X.shape[0]
    own = sims[np.arange(n), labels]
    for attempt in range(2):
        sums = _cluster_sums(X, labels, k)
        norms = np.linalg.norm(sums, axis=1)
        bad = np.flatnonzero(norms <= DEGENERATE_NORM)
        if bad.size == 0:
            return labels, sums, norms
        if attempt == 1:
            raise DegenerateMean(f"clusters {bad.tolist()} still degenerate after reassignment")
        moved = np.zeros(n, dtype=bool)
        for j in bad:
            counts = np.bincount(labels, minlength=k)
            eligible = (counts[labels] >= 2) & (labels != j) & ~moved
            if not eligible.any():
                raise DegenerateMean(f"no point available to refill cluster {j}")
            cand = np.flatnonzero(eligible)
            i = cand[np.argmin(own[cand])]
            labels[i] = j
            moved[i] = True
    raise AssertionError("unreachable")


def _single_run(X, k, rng, max_iter, tol):
    centers = _seed_centers(X, k, rng)
    labels = None
    log = []
    prev = -math.inf
    for _ in range(max_iter):
        sims = X @ centers.T
        new = np.argmax(sims, axis=1)  # first maximum: lowest center index wins ties
        new, sums, norms = _repair(X, new, sims, k)
        centers = sums / norms[:, None]
        obj = _objective(X, centers, new)
        log.append(obj)
        changed = labels is None or not np.array_equal(new, labels)
        labels = new
        if not changed or obj - prev < tol:
            break
        prev = obj
    return labels, centers, log


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def spherical_kmeans(
    points,
    k: int,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> ClusterModel:
    """Best-of-``restarts`` spherical k-means.

    Each restart seeds with k-means++ under cosine distance, then alternates
    max-dot assignment and renormalized-mean updates until no label changes,
    the objective gains less than ``tol``, or ``max_iter`` is hit. The model
    with the highest objective wins; ties go to the earliest restart.
    """
    X = _as_array(points)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooFewPoints(f"{n} points cannot form {k} clusters")
    if restarts < 1 or max_iter < 1:
        raise ValueError("restarts and max_iter must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(restarts)
    runs = _map(lambda ss: _single_run(X, k, np.random.default_rng(ss), max_iter, tol), streams, workers)

    best = 0
    for r in range(1, restarts):
        if runs[r][2][-1] > runs[best][2][-1]:
            best = r
    labels, centers, log = runs[best]
    sil = silhouette_cosine(X, labels) if k >= 2 and n >= 2 else None
    return ClusterModel(
        k=k,
        assignments=labels,
        centers=centers,
        objective=log[-1],
        silhouette=sil,
        seed=seed,
        iterations=len(log),
        restarts_used=restarts,
        objective_logs=tuple(tuple(run[2]) for run in runs),
        best_restart=best,
    )


def silhouette_cosine(points, assignments, block: int = 512) -> float:
    """Mean silhouette with cosine distance ``1 - <x, y>``.

    Singleton clusters contribute 0, as do points whose intra- and
    nearest-cluster distances are both zero (coincident points).
    """
    X = _as_array(points)
    labels = np.asarray(assignments)
    n = X.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape[0] if labels.ndim else 0} labels for {n} points")
    if n < 2:
        raise TooFewPoints("silhouette needs at least 2 points")
    uniq, lab = np.unique(labels, return_inverse=True)
    m = uniq.size
    if m < 2:
        raise SingleCluster("silhouette needs at least 2 distinct labels")
    counts = np.bincount(lab, minlength=m)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), lab] = 1.0

    scores = np.zeros(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        dist = np.clip(1.0 - X[start:stop] @ X.T, 0.0, None)
        dist[rows - start, rows] = 0.0
        sums = dist @ onehot
        own = lab[start:stop]
        own_n = counts[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[rows - start, own] / (own_n - 1)
            means = sums / counts
        means[rows - start, own] = np.inf
        b = means.min(axis=1)
        top = np.maximum(a, b)
        s = np.where((own_n > 1) & (top > SILHOUETTE_EPS), (b - a) / np.where(top > 0, top, 1.0), 0.0)
        scores[start:stop] = s
    return float(scores.mean())


def select_k(
    points,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> tuple[int, dict[int, ClusterModel]]:
    """Cluster for every k in [k_min, k_max]; pick the highest silhouette (smaller k on ties)."""
    n = _as_array(points).shape[0]
    if k_min < 2:
        raise ValueError("k_min must be >= 2")
    if k_max < k_min:
        raise ValueError(f"empty k range [{k_min}, {k_max}]")
    if k_max > n - 1:
        raise TooFewPoints(f"k_max={k_max} needs at least {k_max + 1} points, have {n}")
    ks = list(range(k_min, k_max + 1))
    fitted = _map(
        lambda k: spherical_kmeans(points, k, seed, restarts, max_iter, tol),
        ks,
        workers,
    )
    models = dict(zip(ks, fitted))
    k_star = ks[0]
    for k in ks[1:]:
        if models[k].silhouette > models[k_star].silhouette:
            k_star = k
    return k_star, models


def extract_directions(model: ClusterModel, class_label: str, **provenance) -> DirectionSet:
    prov = {
        "seed": model.seed,
        "silhouette": model.silhouette,
        "n_samples": int(model.assignments.size),
    }
    prov.update(provenance)
    return DirectionSet(str(class_label), model.centers.copy(), prov)
