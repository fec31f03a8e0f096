"""Per-pair latent differences and their projection onto the unit sphere."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllRowsDegenerate, DimMismatch, EmptyManifest, ShapeMismatch
from .tensor_io import LatentMatrix, PairManifest

DEFAULT_EPSILON_NORM = 1e-8
PAIR_SEPARATOR = "→"  # "f_id→cf_id"


@dataclass(frozen=True, eq=False)
class UnitMatrix:
    """Unit-norm rows (float64) plus the L2 norm each row had before scaling."""

    ids: tuple[str, ...]
    data: np.ndarray
    source_norms: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        norms = np.array(self.source_norms, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ShapeMismatch(f"unit matrix must be N x d with d >= 1, got {data.shape}")
        if len(self.ids) != data.shape[0] or norms.shape != (data.shape[0],):
            raise ShapeMismatch("ids, rows and source_norms must have equal length")
        if data.shape[0]:
            dev = np.abs(np.linalg.norm(data, axis=1) - 1.0).max()
            if dev > 1e-6:
                raise ShapeMismatch(f"rows are not unit norm (max deviation {dev:.3g})")
        data.setflags(write=False)
        norms.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "source_norms", norms)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_array(cls, data, ids=None) -> "UnitMatrix":
        """Wrap rows that are already unit norm (source norms recorded as 1)."""
        data = np.asarray(data, dtype=np.float64)
        if ids is None:
            ids = [str(i) for i in range(data.shape[0])]
        return cls(tuple(ids), data, np.ones(data.shape[0]))

    @classmethod
    def from_latent(cls, m: LatentMatrix) -> "UnitMatrix":
        """Load stored unit rows, re-projecting away float32 rounding."""
        data = m.data.astype(np.float64)
        norms = np.linalg.norm(data, axis=1)
        if m.n and np.abs(norms - 1.0).max() > 1e-5:
            raise ShapeMismatch("stored rows are not unit norm; run normalize first")
        return cls(m.ids, data / norms[:, None], np.ones(m.n))

    def to_latent(self) -> LatentMatrix:
        return LatentMatrix(self.ids, self.data)

    def subset(self, rows) -> "UnitMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return UnitMatrix(tuple(self.ids[i] for i in rows), self.data[rows], self.source_norms[rows])


def difference_vectors(factual: LatentMatrix, counterfactual: LatentMatrix, manifest: PairManifest) -> LatentMatrix:
    """Row i is ``counterfactual[cf_i] - factual[f_i]``, in manifest order."""
    if factual.d != counterfactual.d:
        raise DimMismatch(f"factual d={factual.d} but counterfactual d={counterfactual.d}")
    if len(manifest) == 0:
        where = f" {manifest.path}" if manifest.path else ""
        raise EmptyManifest(f"manifest{where} contains no pairs")
    manifest.validate_against(factual, counterfactual)
    f_rows = [factual.index[e.factual_id] for e in manifest.entries]
    cf_rows = [counterfactual.index[e.counterfactual_id] for e in manifest.entries]
    diffs = counterfactual.data[cf_rows].astype(np.float64) - factual.data[f_rows].astype(np.float64)
    ids = [f"{e.factual_id}{PAIR_SEPARATOR}{e.counterfactual_id}" for e in manifest.entries]
    return LatentMatrix(ids, diffs)


def unit_normalize(diffs: LatentMatrix, epsilon_norm: float = DEFAULT_EPSILON_NORM) -> tuple[UnitMatrix, list[str]]:
    """Scale each row to unit L2 norm.

    Rows whose norm is at or below ``epsilon_norm`` carry no direction; they
    are dropped and their ids returned as the second element.
    """
    if epsilon_norm <= 0:
        raise ValueError("epsilon_norm must be positive")
    data = diffs.data.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", data, data))
    keep = norms > epsilon_norm
    skipped = [sid for sid, k in zip(diffs.ids, keep) if not k]
    if diffs.n and not keep.any():
        raise AllRowsDegenerate(f"all {diffs.n} difference rows have norm <= {epsilon_norm}")
    kept_ids = tuple(sid for sid, k in zip(diffs.ids, keep) if k)
    unit = data[keep] / norms[keep, None]
    return UnitMatrix(kept_ids, unit, norms[keep]), skipped
