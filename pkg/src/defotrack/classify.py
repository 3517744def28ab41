"""Decide whether a segmented cloud is curve-like (1D) or surface-like (2D).

Local covariance eigenvalues at randomly sampled seeds: a curve is locally
line-like (lambda2/lambda1 near 0), a surface locally planar (ratio near 1).
The median ratio over seeds is compared against a fixed threshold; the median
is robust to seeds landing near junctions or boundaries.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, as_point
from .errors import ClassificationError, ConfigurationError, InvalidInputError


class ObjectClass(enum.Enum):
    ONE_DIM = "1d"
    TWO_DIM = "2d"


@dataclass(frozen=True)
class ClassifyParams:
    num_seeds: int = 32
    radius: float = 0.03        # m, neighborhood radius
    ratio_threshold: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_seeds < 1 or self.radius <= 0:
            raise ConfigurationError("num_seeds >= 1 and radius > 0 required")
        if not 0 < self.ratio_threshold < 1:
            raise ConfigurationError("ratio_threshold must be in (0, 1)")


def local_eigenvalues(cloud: PointCloud, seed, radius: float) -> np.ndarray | None:
    """Descending eigenvalues of the covariance of the ball neighborhood of seed.

    Returns None when the neighborhood has fewer than 4 points (degenerate).
    Eigenvalues are clamped at 0.
    """
    tree = cKDTree(cloud.points)
    idx = tree.query_ball_point(as_point(seed), radius)
    if len(idx) < 4:
        return None
    nb = cloud.points[idx]
    centered = nb - nb.mean(axis=0)
    cov = centered.T @ centered / len(nb)
    vals = np.linalg.eigvalsh(cov)[::-1]
    return np.maximum(vals, 0.0)


def classify_object(cloud: PointCloud, params: ClassifyParams = ClassifyParams()) -> ObjectClass:
    """Sample seeds, take the median lambda2/lambda1, threshold it.

    Deterministic given rng_seed. Raises ClassificationError when more than
    half the seeds have degenerate neighborhoods.
    """
    n = len(cloud)
    if n < 4:
        raise InvalidInputError("need at least 4 points to classify")
    rng = np.random.default_rng(params.rng_seed)
    seed_idx = rng.integers(0, n, size=params.num_seeds)

    tree = cKDTree(cloud.points)
    ratios = []
    degenerate = 0
    for i in seed_idx:
        nb_idx = tree.query_ball_point(cloud.points[i], params.radius)
        if len(nb_idx) < 4:
            degenerate += 1
            continue
        nb = cloud.points[nb_idx]
        centered = nb - nb.mean(axis=0)
        cov = centered.T @ centered / len(nb)
        vals = np.maximum(np.linalg.eigvalsh(cov)[::-1], 0.0)
        if vals[0] <= 0:
            degenerate += 1
            continue
        ratios.append(vals[1] / vals[0])
    if degenerate > params.num_seeds // 2 or not ratios:
        raise ClassificationError(
            f"{degenerate}/{params.num_seeds} seeds had degenerate neighborhoods")
    median_ratio = float(np.median(ratios))
    return ObjectClass.ONE_DIM if median_ratio < params.ratio_threshold else ObjectClass.TWO_DIM
