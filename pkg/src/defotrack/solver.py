"""Gauss-Seidel constraint projection solver.

Each sweep applies, in order: pairwise edge-length projection over all edges
(sequentially, so later edges see earlier corrections), nearest-cloud-point
projection of every non-anchor keypoint, and an anchor reset. With default
flags the anchor and cloud-membership constraints hold exactly at exit while
edge lengths remain approximate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NNIndex, as_point
from .errors import ConfigurationError, InvalidInputError
from .topology import KeypointSet, Topology

_DEGENERATE_EPS = 1e-9


@dataclass(frozen=True)
class SolverParams:
    iterations: int = 30
    use_anchor: bool = True
    use_edge: bool = True
    use_projection: bool = True
    convergence_tol: float | None = 1e-5  # m; early stop on max position change

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")


@dataclass
class SolveDiagnostics:
    sweeps: int = 0
    max_edge_residual: float = 0.0  # m, after the final sweep
    degenerate_projections: int = 0


def project_edge(xi, xj, d: float):
    """Move both points symmetrically along their connecting line to distance d.

    The midpoint is preserved. Coincident points are pushed apart along +x
    by d/2 each (degenerate but deterministic).
    """
    if d <= 0:
        raise InvalidInputError("rest length must be positive")
    xi = as_point(xi)
    xj = as_point(xj)
    delta = xj - xi
    dist = float(np.linalg.norm(delta))
    if dist < _DEGENERATE_EPS:
        half = np.array([d / 2.0, 0.0, 0.0])
        return xi - half, xj + half
    corr = 0.5 * (dist - d) / dist
    return xi + corr * delta, xj - corr * delta


def gauss_seidel_solve(x0: KeypointSet, cloud_index: NNIndex | None, topology: Topology,
                       anchor_positions: np.ndarray | None,
                       params: SolverParams = SolverParams()):
    """Run M projection sweeps from x0; returns (KeypointSet, SolveDiagnostics).

    anchor_positions is an (|A|, 3) array aligned with topology.anchors; it is
    required when use_anchor is on and the topology has anchors. cloud_index
    is required when use_projection is on.
    """
    n = topology.num_keypoints
    if len(x0) != n:
        raise InvalidInputError("x0 size does not match topology")
    if topology.rest_lengths is None and params.use_edge and topology.edges:
        raise InvalidInputError("topology has no rest lengths")
    if params.use_projection and cloud_index is None:
        raise InvalidInputError("cloud projection enabled but no index given")

    anchor_idx = topology.anchor_indices
    use_anchor = params.use_anchor and len(anchor_idx) > 0
    if use_anchor:
        anchor_positions = np.asarray(anchor_positions, dtype=np.float64)
        if anchor_positions.shape != (len(anchor_idx), 3):
            raise InvalidInputError("anchor_positions must align with topology.anchors")
    non_anchor = np.setdiff1d(np.arange(n), anchor_idx) if len(anchor_idx) else np.arange(n)

    # plain float lists: the sequential edge loop dominates and numpy per-pair
    # overhead is an order of magnitude slower
    x = [[float(a), float(b), float(c)] for a, b, c in x0.positions]
    edges = topology.edges
    rest = topology.rest_lengths if topology.rest_lengths is not None else np.zeros(len(edges))
    edge_list = [(i, j, float(d)) for (i, j), d in zip(edges, rest)]

    diag = SolveDiagnostics()
    if use_anchor:
        for k, a in zip(anchor_idx, anchor_positions):
            x[k] = [float(a[0]), float(a[1]), float(a[2])]

    tol = params.convergence_tol
    for sweep in range(params.iterations):
        prev = [row[:] for row in x] if tol is not None else None

        if params.use_edge:
            for i, j, d in edge_list:
                xi = x[i]
                xj = x[j]
                dx = xj[0] - xi[0]
                dy = xj[1] - xi[1]
                dz = xj[2] - xi[2]
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dist < _DEGENERATE_EPS:
                    half = d / 2.0
                    xi[0] -= half
                    xj[0] += half
                    diag.degenerate_projections += 1
                    continue
                corr = 0.5 * (dist - d) / dist
                cx, cy, cz = corr * dx, corr * dy, corr * dz
                xi[0] += cx
                xi[1] += cy
                xi[2] += cz
                xj[0] -= cx
                xj[1] -= cy
                xj[2] -= cz

        if params.use_projection and len(non_anchor):
            queries = np.array([x[i] for i in non_anchor])
            idxs, _ = cloud_index.nearest_many(queries)
            snapped = cloud_index.cloud.points[idxs]
            for i, p in zip(non_anchor, snapped):
                x[i] = [float(p[0]), float(p[1]), float(p[2])]

        if use_anchor:
            for k, a in zip(anchor_idx, anchor_positions):
                x[k] = [float(a[0]), float(a[1]), float(a[2])]

        diag.sweeps = sweep + 1
        if tol is not None:
            moved = max(
                (abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])
                 for a, b in zip(x, prev)),
                default=0.0,
            )
            if moved < tol:
                break

    out = np.asarray(x, dtype=np.float64)
    if edge_list:
        residuals = [
            abs(math.dist(out[i], out[j]) - d) for i, j, d in edge_list
        ]
        diag.max_edge_residual = max(residuals)
    return KeypointSet(out, x0.frame_index), diag
