"""Fréchet distance between Gaussians fitted to two feature sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NotPSD, ShapeMismatch, TooFewSamples
from .tensor_io import LatentMatrix

PSD_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.array(self.sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise ShapeMismatch(f"covariance {sigma.shape} does not match mean of length {mu.size}")
        if self.n < 2:
            raise TooFewSamples("Gaussian statistics need n >= 2")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-8):
            raise ShapeMismatch("covariance must be symmetric")
        vals = np.linalg.eigvalsh(sigma) if mu.size else np.zeros(1)
        if vals.min() < -PSD_TOL * max(1.0, float(np.abs(vals).max())):
            raise NotPSD("covariance is not positive semidefinite")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


def gaussian_stats(features: LatentMatrix | np.ndarray) -> GaussianStats:
    X = features.data if isinstance(features, LatentMatrix) else np.asarray(features)
    X = X.astype(np.float64)
    if X.ndim != 2:
        raise ShapeMismatch("features must be an N x D matrix")
    n = X.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 feature rows, got {n}")
    mu = X.mean(axis=0)
    centered = X - mu
    sigma = centered.T @ centered / (n - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2.0, n)


def _psd_sqrt(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root via eigendecomposition; returns (root, clamped eigenvalues)."""
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.size and vals.min() < -PSD_TOL * scale:
        raise NotPSD(f"{what} has eigenvalue {vals.min():.3g}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, vals


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0.

    The trace of ``(S_a S_b)^(1/2)`` is taken from the eigenvalues of the
    symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``, which shares its spectrum.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"feature dimensions differ: {a.dim} vs {b.dim}")
    root_a, _ = _psd_sqrt(a.sigma, "first covariance")
    _, vals = _psd_sqrt(root_a @ b.sigma @ root_a, "covariance product")
    diff = a.mu - b.mu
    value = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sqrt(vals).sum()
    return max(0.0, float(value))
