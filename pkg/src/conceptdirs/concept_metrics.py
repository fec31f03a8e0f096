"""Per-concept effect metrics used for the K ablation.

Effects are probability differences ``f_y(x moved along c_k) - f_y(x)``.
Everything here works in probability units; reports rescale to percentage
points where needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyConceptList, IdMismatch, ShapeMismatch, SingleDirection
from .sphere_cluster import DirectionSet
from .traversal import ProbTable

DEFAULT_DELTA = 0.05
DEFAULT_Q = 0.3


def _mean(values) -> float:
    # exactly rounded, so independent of sample order
    return math.fsum(values.tolist()) / len(values)


@dataclass(frozen=True, eq=False)
class EffectTable:
    ids: tuple[str, ...]
    effects: np.ndarray

    def __post_init__(self):
        eff = np.array(self.effects, dtype=np.float64)
        if eff.ndim != 2 or eff.shape[0] < 1 or eff.shape[1] < 1:
            raise ShapeMismatch(f"effect table must be N x K with N, K >= 1, got {eff.shape}")
        if len(self.ids) != eff.shape[0]:
            raise ShapeMismatch(f"{len(self.ids)} ids for {eff.shape[0]} rows")
        if not np.isfinite(eff).all() or np.abs(eff).max() > 1.0:
            raise ShapeMismatch("effects are probability differences and must lie in [-1, 1]")
        eff.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "effects", eff)

    @property
    def n(self) -> int:
        return self.effects.shape[0]

    @property
    def k(self) -> int:
        return self.effects.shape[1]

    def best_concept(self) -> np.ndarray:
        """Per-sample index of the strongest concept (lowest index on ties)."""
        return np.argmax(self.effects, axis=1)


def effect_table(baseline: ProbTable, per_concept_manipulated: Sequence[ProbTable], target: str) -> EffectTable:
    if not per_concept_manipulated:
        raise EmptyConceptList("need at least one manipulated table")
    base = baseline.column(target)
    cols = []
    for k, table in enumerate(per_concept_manipulated):
        if table.ids != baseline.ids or table.classes != baseline.classes:
            raise IdMismatch(f"manipulated table {k} does not match the baseline ids/classes")
        cols.append(table.column(target) - base)
    return EffectTable(baseline.ids, np.stack(cols, axis=1))


def coverage(t: EffectTable, delta: float = DEFAULT_DELTA) -> float:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(np.count_nonzero(t.effects.max(axis=1) >= delta)) / t.n


def best_of_k(t: EffectTable) -> float:
    return _mean(t.effects.max(axis=1))


def top_m(q: float, k: int) -> int:
    """ceil(q * k), ignoring float noise such as 0.3 * 10 = 3.0000000000000004."""
    return min(k, max(1, math.ceil(q * k - 1e-9)))


def top_q_mean(t: EffectTable, q: float = DEFAULT_Q) -> float:
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    m = top_m(q, t.k)
    top = -np.sort(-t.effects, axis=1)[:, :m]
    return _mean(top.mean(axis=1))


def redundancy(directions: DirectionSet | np.ndarray) -> float:
    """Mean cosine over all distinct direction pairs."""
    C = directions.directions if isinstance(directions, DirectionSet) else np.asarray(directions, dtype=np.float64)
    k = C.shape[0]
    if k < 2:
        raise SingleDirection("redundancy needs at least two directions")
    gram = C @ C.T
    iu = np.triu_indices(k, 1)
    return 2.0 * math.fsum(gram[iu].tolist()) / (k * (k - 1))


def ablation_record(k: int, directions: DirectionSet, t: EffectTable, delta=DEFAULT_DELTA, q=DEFAULT_Q) -> dict:
    return {
        "K": int(k),
        "redundancy": redundancy(directions) if directions.k >= 2 else None,
        "coverage": coverage(t, delta),
        "best_of_k": best_of_k(t),
        "top_q_mean": top_q_mean(t, q),
    }
