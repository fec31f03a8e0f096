"""Moving latents along concept directions and scoring the result."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimMismatch, IdMismatch, ShapeMismatch, UnknownTarget
from .tensor_io import LatentMatrix


@dataclass(frozen=True)
class AlphaSweep:
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("alpha sweep is empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"alpha values must be strictly increasing: {values}")
        object.__setattr__(self, "values", values)

    @classmethod
    def parse(cls, text: str) -> "AlphaSweep":
        return cls(tuple(float(v) for v in text.split(",") if v.strip()))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ProbTable:
    """Class probabilities per sample (rows sum to 1)."""

    ids: tuple[str, ...]
    classes: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        ids, classes = tuple(self.ids), tuple(self.classes)
        if probs.shape != (len(ids), len(classes)):
            raise ShapeMismatch(f"probability matrix {probs.shape} vs {len(ids)} ids x {len(classes)} classes")
        if len(set(classes)) != len(classes):
            raise ShapeMismatch(f"duplicate class labels in {classes}")
        if probs.size:
            if not np.isfinite(probs).all() or probs.min() < 0.0 or probs.max() > 1.0:
                raise ShapeMismatch("probabilities must lie in [0, 1]")
            worst = np.abs(probs.sum(axis=1) - 1.0).max()
            if worst > 1e-5:
                raise ShapeMismatch(f"probability rows must sum to 1 (off by {worst:.3g})")
        probs.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "probs", probs)

    def column(self, label: str) -> np.ndarray:
        try:
            return self.probs[:, self.classes.index(label)]
        except ValueError:
            raise UnknownTarget(f"class {label!r} not in {list(self.classes)}") from None

    def __eq__(self, other):
        if not isinstance(other, ProbTable):
            return NotImplemented
        return self.ids == other.ids and self.classes == other.classes and np.array_equal(self.probs, other.probs)

    __hash__ = None


Scorer = Callable[[LatentMatrix], ProbTable]


def apply_direction(latents: LatentMatrix, direction, alpha: float) -> LatentMatrix:
    """Return ``z + alpha * c`` for every row z."""
    c = np.asarray(direction, dtype=np.float64).reshape(-1)
    if c.size != latents.d:
        raise DimMismatch(f"direction has length {c.size}, latents have d={latents.d}")
    if abs(np.linalg.norm(c) - 1.0) > 1e-6:
        raise ShapeMismatch("direction must be unit norm")
    if alpha == 0:
        return latents
    return LatentMatrix(latents.ids, latents.data.astype(np.float64) + float(alpha) * c)


class LinearSoftmaxScorer:
    """softmax(W z + b): a self-contained stand-in for an external classifier."""

    def __init__(self, weights, bias=None, classes: Sequence[str] | None = None):
        W = np.array(weights, dtype=np.float64)
        if W.ndim != 2:
            raise ShapeMismatch("weights must be a C x d matrix")
        b = np.zeros(W.shape[0]) if bias is None else np.array(bias, dtype=np.float64).reshape(-1)
        if b.shape != (W.shape[0],):
            raise ShapeMismatch(f"bias length {b.size} for {W.shape[0]} classes")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ValueError("scorer parameters must be finite")
        self.weights = W
        self.bias = b
        self.classes = tuple(classes) if classes is not None else tuple(str(i) for i in range(W.shape[0]))
        if len(self.classes) != W.shape[0]:
            raise ShapeMismatch("one class label per weight row required")

    def logits(self, latents: LatentMatrix) -> np.ndarray:
        if latents.d != self.weights.shape[1]:
            raise DimMismatch(f"scorer expects d={self.weights.shape[1]}, got {latents.d}")
        return latents.data.astype(np.float64) @ self.weights.T + self.bias

    def __call__(self, latents: LatentMatrix) -> ProbTable:
        z = self.logits(latents)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return ProbTable(latents.ids, self.classes, e / e.sum(axis=1, keepdims=True))

    @classmethod
    def from_latent(cls, m: LatentMatrix, bias=None) -> "LinearSoftmaxScorer":
        """Weights stored as a latent file: one row per class, ids are the class labels."""
        return cls(m.data, bias, m.ids)


def linear_softmax_scorer(weights, bias=None, classes=None) -> LinearSoftmaxScorer:
    return LinearSoftmaxScorer(weights, bias, classes)


def _check_aligned(a: ProbTable, b: ProbTable):
    if a.ids != b.ids:
        raise IdMismatch("probability tables list different sample ids")
    if a.classes != b.classes:
        raise IdMismatch(f"class lists differ: {a.classes} vs {b.classes}")


def success_rate(baseline: ProbTable, manipulated: ProbTable, target: str) -> float:
    """Fraction of samples whose target probability strictly increased."""
    _check_aligned(baseline, manipulated)
    before = baseline.column(target)
    after = manipulated.column(target)
    if before.size == 0:
        raise IdMismatch("probability tables are empty")
    return float(np.count_nonzero(after > before)) / before.size


def best_alpha(rates: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Pick (alpha, SR) with the highest SR; the smaller alpha wins ties."""
    best = None
    for alpha, sr in rates:
        if best is None or sr > best[1]:
            best = (alpha, sr)
    if best is None:
        raise ValueError("no alpha values to choose from")
    return best
