"""Concept activation vectors and TCAV scores from precomputed activations.

The CAV is the weight vector of an L2-regularised logistic regression that
separates concept activations from negatives, trained by plain full-batch
gradient descent so that the result depends only on the data and settings.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateData,
    DegenerateDataWarning,
    DimMismatch,
    EmptyGradients,
    InsufficientNegatives,
)
from .tensor_io import LatentMatrix

DEFAULT_L2 = 1e-3
DEFAULT_ITERATIONS = 500
DEFAULT_STEP = 0.1
DEFAULT_RUNS = 10


@dataclass(frozen=True, eq=False)
class CavModel:
    v: np.ndarray
    train_accuracy: float
    seed: int

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("CAV must be unit norm")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


class TcavRuns(NamedTuple):
    mean: float
    std: float
    per_run: list


def _rows(m) -> np.ndarray:
    data = m.data if isinstance(m, LatentMatrix) else np.asarray(m)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimMismatch("activations must be an N x D matrix")
    return data


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_cav(
    concept_acts,
    negative_acts,
    l2_reg: float = DEFAULT_L2,
    seed: int = 0,
    iterations: int = DEFAULT_ITERATIONS,
    step: float = DEFAULT_STEP,
) -> CavModel:
    """Fit a CAV pointing from the negatives toward the concept examples.

    Inputs are centred and divided by one global scale before training;
    neither changes the direction of the learned weight vector. ``seed`` is
    recorded for provenance; the optimiser itself has no random component.
    """
    pos, neg = _rows(concept_acts), _rows(negative_acts)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise DegenerateData("concept and negative sets must both be non-empty")
    if pos.shape[1] != neg.shape[1]:
        raise DimMismatch(f"concept D={pos.shape[1]} but negatives D={neg.shape[1]}")
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])])
    centered = X - X.mean(axis=0)
    scale = math.sqrt(float(np.einsum("ij,ij->", centered, centered)) / X.shape[0])
    if scale == 0.0:
        raise DegenerateData("all activations are identical")
    Xs = centered / scale

    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(iterations):
        err = _sigmoid(Xs @ w + b) - y
        w -= step * (Xs.T @ err / n + l2_reg * w)
        b -= step * float(err.mean())

    accuracy = float(np.mean((Xs @ w + b > 0) == (y == 1)))
    norm = np.linalg.norm(w)
    chance = max(pos.shape[0], neg.shape[0]) / n
    if norm <= 1e-12:
        warnings.warn("concept and negative activations are indistinguishable; CAV is arbitrary", DegenerateDataWarning, stacklevel=2)
        v = np.zeros(X.shape[1])
        v[0] = 1.0
    else:
        v = w / norm
        if accuracy <= chance:
            warnings.warn(f"CAV train accuracy {accuracy:.3f} is no better than chance", DegenerateDataWarning, stacklevel=2)
    return CavModel(v, accuracy, seed)


def tcav_score(gradients, cav: CavModel) -> float:
    """Fraction of gradient rows with a strictly positive component along the CAV."""
    g = _rows(gradients)
    if g.shape[0] == 0:
        raise EmptyGradients("no gradient rows to score")
    if g.shape[1] != cav.v.size:
        raise DimMismatch(f"gradients have D={g.shape[1]}, CAV has D={cav.v.size}")
    return float(np.count_nonzero(g @ cav.v > 0.0)) / g.shape[0]


def _draw_subsets(pool_size, size, runs, seed):
    if size > pool_size or math.comb(pool_size, size) < runs:
        raise InsufficientNegatives(f"cannot draw {runs} distinct subsets of {size} from a pool of {pool_size}")
    seen, subsets = set(), []
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        while True:
            pick = tuple(sorted(rng.choice(pool_size, size=size, replace=False).tolist()))
            if pick not in seen:
                break
        seen.add(pick)
        subsets.append(np.array(pick))
    return subsets


def tcav_runs(
    concept_acts,
    negatives_pool,
    gradients,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
    l2_reg: float = DEFAULT_L2,
    subset_size: int | None = None,
    workers: int = 1,
) -> TcavRuns:
    """Repeat CAV fitting against fresh negative subsets; report mean and sample std."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    pos, pool = _rows(concept_acts), _rows(negatives_pool)
    size = subset_size or pos.shape[0]
    subsets = _draw_subsets(pool.shape[0], size, runs, seed)

    def one(r):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDataWarning)
            cav = fit_cav(pos, pool[subsets[r]], l2_reg=l2_reg, seed=seed + r)
        return tcav_score(gradients, cav)

    if workers > 1 and runs > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            scores = list(ex.map(one, range(runs)))
    else:
        scores = [one(r) for r in range(runs)]
    mean = math.fsum(scores) / runs
    std = float(np.std(scores, ddof=1)) if runs > 1 else 0.0
    return TcavRuns(mean, std, scores)
