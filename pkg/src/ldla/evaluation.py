"""Distribution metrics: Fréchet distance between feature Gaussians, MAE.

The feature extractor is pluggable.  Desk scale uses simple pooled-pixel
features so every metric has an analytic oracle; a pretrained
inception-style extractor can be dropped in through the same callable
interface (any ``image -> 1-D feature vector`` function) for full-scale
runs.  Absolute comparability with published FID numbers is explicitly
out of scope.

The matrix square root inside the Fréchet distance is taken by symmetric
eigendecomposition.  Eigenvalues below -1e-6 mean the input was not a
covariance matrix and raise; small negative values from rounding are
clamped to zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError, ValidationError

EIGENVALUE_TOLERANCE = -1e-6

FeatureExtractor = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian summary (mean, unbiased covariance, count) of a feature set."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        if self.mu.ndim != 1:
            raise ShapeError(f"mu must be 1-D, got shape {self.mu.shape}")
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ShapeError(f"sigma shape {self.sigma.shape} != ({d}, {d})")
        if self.n < 2:
            raise DomainError(f"need n >= 2 samples, got {self.n}")
        asym = float(np.max(np.abs(self.sigma - self.sigma.T))) if d else 0.0
        if asym > 1e-8:
            raise ValidationError(f"sigma asymmetric by {asym:.3g} (> 1e-8)")
        min_eig = float(np.linalg.eigvalsh(self.sigma).min())
        if min_eig < -1e-8:
            raise ValidationError(f"sigma has eigenvalue {min_eig:.3g} < -1e-8")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def _clamped_sqrt_eigs(matrix: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a symmetric PSD matrix, clamping rounding noise.

    Returns (sqrt-eigenvalues, eigenvectors).  Eigenvalues below the
    tolerance indicate a real numerical failure and raise.
    """
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if float(vals.min()) < EIGENVALUE_TOLERANCE:
        raise NumericError(
            f"{what}: eigenvalue {float(vals.min()):.3g} below tolerance "
            f"{EIGENVALUE_TOLERANCE}"
        )
    return np.sqrt(np.clip(vals, 0.0, None)), vecs


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + tr(Sigma_a + Sigma_b - 2 (Sigma_a Sigma_b)^1/2)."""
    if a.dim != b.dim:
        raise ShapeError(f"stat dims differ: {a.dim} vs {b.dim}")
    sqrt_vals, vecs = _clamped_sqrt_eigs(a.sigma, "sqrt of first covariance")
    sqrt_a = (vecs * sqrt_vals) @ vecs.T
    inner = sqrt_a @ b.sigma @ sqrt_a
    inner_sqrt_vals, _ = _clamped_sqrt_eigs(inner, "sqrt of covariance product")
    mean_term = float(np.sum((a.mu - b.mu) ** 2))
    trace_term = float(np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sum(inner_sqrt_vals))
    return max(mean_term + trace_term, 0.0)


def compute_stats(
    images: Sequence[np.ndarray], extractor: FeatureExtractor
) -> FeatureStats:
    """Gaussian summary of extracted features (unbiased covariance)."""
    if len(images) < 2:
        raise DomainError(f"need at least 2 images, got {len(images)}")
    feats = np.stack([np.asarray(extractor(img), dtype=np.float64).ravel() for img in images])
    mu = feats.mean(axis=0)
    sigma = np.atleast_2d(np.cov(feats, rowvar=False))
    return FeatureStats(mu=mu, sigma=sigma, n=feats.shape[0])


def merge_stats(a: FeatureStats, b: FeatureStats) -> FeatureStats:
    """Exact pooled moments, associative across shards."""
    if a.dim != b.dim:
        raise ShapeError(f"stat dims differ: {a.dim} vs {b.dim}")
    n = a.n + b.n
    delta = b.mu - a.mu
    mu = (a.n * a.mu + b.n * b.mu) / n
    scatter = (
        (a.n - 1) * a.sigma
        + (b.n - 1) * b.sigma
        + np.outer(delta, delta) * (a.n * b.n / n)
    )
    return FeatureStats(mu=mu, sigma=scatter / (n - 1), n=n)


def mae_scores(predicted: Sequence[float], target: Sequence[float]) -> float:
    """Mean absolute difference between two equal-length score lists."""
    if len(predicted) != len(target) or not predicted:
        raise ShapeError(
            f"need equal nonempty lists, got {len(predicted)} vs {len(target)}"
        )
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    for name, arr in (("predicted", p), ("target", t)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError(f"{name} scores must lie in [0, 1]")
    return float(np.mean(np.abs(p - t)))


def split_reference_fid(
    images: Sequence[np.ndarray],
    extractor: FeatureExtractor,
    rng: np.random.Generator,
) -> float:
    """FID between two random halves of one dataset (its noise floor)."""
    n = len(images)
    if n < 4:
        raise DomainError(f"need at least 4 images to split, got {n}")
    perm = rng.permutation(n)
    half = n // 2
    first = [images[i] for i in perm[:half]]
    second = [images[i] for i in perm[half : 2 * half]]
    return frechet_distance(
        compute_stats(first, extractor), compute_stats(second, extractor)
    )


# ---------------------------------------------------------------------------
# extractors


def mean_pool_features(grid: int = 4) -> FeatureExtractor:
    """Block-mean pooled color features: grid x grid x channels dims."""

    def extract(img: np.ndarray) -> np.ndarray:
        if img.ndim != 3:
            raise ShapeError(f"expected (H, W, C) image, got {img.shape}")
        blocks_y = np.array_split(img.astype(np.float64), grid, axis=0)
        out = []
        for row in blocks_y:
            for block in np.array_split(row, grid, axis=1):
                out.append(block.mean(axis=(0, 1)))
        return np.concatenate(out)

    return extract


def flatten_features(img: np.ndarray) -> np.ndarray:
    """Raw pixels as the feature vector (tiny images only)."""
    return np.asarray(img, dtype=np.float64).ravel()


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    fid: float
    mae: Optional[float] = None
    split_reference: Optional[float] = None
    per_zone: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        values = [self.fid, self.mae, self.split_reference, *self.per_zone.values()]
        for v in values:
            if v is not None and not math.isfinite(v):
                raise ValidationError(f"non-finite report value {v}")

    def to_json(self) -> str:
        payload = {
            "fid": self.fid,
            "mae": self.mae,
            "split_reference": self.split_reference,
            "per_zone": self.per_zone,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)
