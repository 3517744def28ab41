"""Object segmentation: depth differencing, exclusion filtering, DBSCAN.

The object cloud for a frame is obtained by differencing against a static
reference depth frame (pre-motion scene), lifting the changed pixels,
dropping anything near a caller-provided exclusion cloud (e.g. robot arms),
clustering what remains, and keeping the biggest cluster.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import CameraModel, DepthFrame, PointCloud, lift_depth
from .errors import ConfigurationError, SegmentationError


@dataclass(frozen=True)
class SegmentationParams:
    diff_threshold: float = 0.02   # m, per-pixel depth-change threshold
    exclusion_radius: float = 0.03  # m
    dbscan_eps: float = 0.02       # m
    dbscan_min_pts: int = 8
    stride: int = 1                # pixel downsampling before lifting

    def __post_init__(self):
        if min(self.diff_threshold, self.exclusion_radius, self.dbscan_eps) <= 0:
            raise ConfigurationError("segmentation thresholds must be positive")
        if self.dbscan_min_pts < 1 or self.stride < 1:
            raise ConfigurationError("dbscan_min_pts and stride must be >= 1")


@dataclass(frozen=True)
class SegmentedFrame:
    cloud: PointCloud
    frame_index: int = 0


def depth_difference_mask(current: DepthFrame, reference: DepthFrame,
                          threshold: float) -> np.ndarray:
    """Pixels where new geometry appears in front of the static reference.

    Selected iff the current pixel is valid and either the reference pixel is
    invalid or the current depth is more than `threshold` closer.
    """
    if current.depth.shape != reference.depth.shape:
        raise ConfigurationError("frame dimensions differ")
    cur_valid = current.valid_mask
    ref_valid = reference.valid_mask
    closer = current.depth < reference.depth - threshold
    return cur_valid & (~ref_valid | closer)


def filter_exclusion(cloud: PointCloud, exclusion: PointCloud, radius: float) -> PointCloud:
    """Keep points strictly farther than `radius` from every exclusion point."""
    if len(cloud) == 0 or len(exclusion) == 0:
        return cloud
    tree = cKDTree(exclusion.points)
    dists, _ = tree.query(cloud.points, k=1)
    return cloud.select(np.nonzero(dists > radius)[0])


def dbscan(cloud: PointCloud, eps: float, min_pts: int):
    """Density-based clustering.

    Returns (clusters, noise): clusters is a list of index arrays in discovery
    order, noise an index array. Core points have >= min_pts neighbors within
    eps (the point itself counts); clusters are maximal density-connected sets.
    Matches the classic sequential algorithm exactly, including assignment of
    border points to the first cluster that reaches them.
    """
    n = len(cloud)
    if n == 0:
        raise SegmentationError("clustering", "empty cloud")
    pts = cloud.points
    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, eps)
    counts = np.fromiter((len(nb) for nb in neighborhoods), dtype=np.int64, count=n)
    is_core = counts >= min_pts

    UNVISITED, NOISE = -2, -1
    labels = np.full(n, UNVISITED, dtype=np.int64)
    cid = 0
    for i in range(n):
        if labels[i] != UNVISITED:
            continue
        if not is_core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cid
        frontier = [i]
        while frontier:
            cand = np.unique(np.concatenate([neighborhoods[j] for j in frontier]))
            cand = cand[(labels[cand] == UNVISITED) | (labels[cand] == NOISE)]
            labels[cand] = cid
            frontier = cand[is_core[cand]].tolist()
        cid += 1

    clusters = [np.nonzero(labels == c)[0] for c in range(cid)]
    noise = np.nonzero(labels == NOISE)[0]
    return clusters, noise


def largest_cluster(cloud: PointCloud, clusters) -> PointCloud:
    """The maximal-cardinality cluster; ties broken by lowest cluster id."""
    if not clusters:
        raise SegmentationError("cluster-selection", "no clusters")
    best = max(range(len(clusters)), key=lambda c: (len(clusters[c]), -c))
    return cloud.select(clusters[best])


def segment_frame(current: DepthFrame, reference: DepthFrame, cam: CameraModel,
                  exclusion: PointCloud | None, params: SegmentationParams,
                  frame_index: int = 0) -> SegmentedFrame:
    """Full per-frame segmentation: difference -> lift -> exclude -> cluster -> select."""
    mask = depth_difference_mask(current, reference, params.diff_threshold)
    if not mask.any():
        raise SegmentationError("differencing", "no changed pixels")
    cloud = lift_depth(current, cam, mask=mask, stride=params.stride)
    if len(cloud) == 0:
        raise SegmentationError("lifting", "no valid pixels under mask")
    if exclusion is not None and len(exclusion) > 0:
        cloud = filter_exclusion(cloud, exclusion, params.exclusion_radius)
        if len(cloud) == 0:
            raise SegmentationError("exclusion", "all points within exclusion radius")
    clusters, _ = dbscan(cloud, params.dbscan_eps, params.dbscan_min_pts)
    if not clusters:
        raise SegmentationError("clustering", "all points labeled noise")
    return SegmentedFrame(largest_cluster(cloud, clusters), frame_index)
