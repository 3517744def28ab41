"""Keypoint state and object topology shared by the solver and tracker."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorRole
from .classify import ObjectClass
from .core import as_points
from .errors import TopologyError


@dataclass(frozen=True)
class Anchor:
    index: int
    role: AnchorRole


@dataclass(frozen=True)
class KeypointSet:
    positions: np.ndarray  # (N, 3)
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", as_points(self.positions))

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Topology:
    """Edge structure, rest lengths, and anchor assignment for N keypoints.

    1D objects are trees (|E| = N - 1); branches lists each chain's keypoint
    indices in order, with junction indices shared between branches. 2D
    objects are R x C grids with 4-neighbor edges.
    """

    object_class: ObjectClass
    num_keypoints: int
    edges: tuple                 # ((i, j), ...) with i < j, sorted
    rest_lengths: np.ndarray | None = None  # meters, one per edge
    anchors: tuple = ()          # (Anchor, ...)
    grid_shape: tuple | None = None      # (R, C) for 2D
    branches: tuple | None = None        # 1D: ordered keypoint index paths

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        n = self.num_keypoints
        if any(i >= j or i < 0 or j >= n for i, j in edges):
            raise TopologyError("edges must be (i, j) with 0 <= i < j < N")
        if len(set(edges)) != len(edges):
            raise TopologyError("duplicate edges")
        if not self._connected():
            raise TopologyError("topology graph is disconnected")
        if self.object_class == ObjectClass.ONE_DIM and len(edges) != n - 1:
            raise TopologyError(f"1D topology must be a tree: {len(edges)} edges for {n} nodes")
        if self.object_class == ObjectClass.TWO_DIM:
            if self.grid_shape is None:
                raise TopologyError("2D topology requires grid_shape")
            r, c = self.grid_shape
            if r * c != n:
                raise TopologyError("grid_shape does not match num_keypoints")
            if set(edges) != set(grid_edges(r, c)):
                raise TopologyError("2D edges must form the 4-neighbor grid")
        if self.rest_lengths is not None:
            rl = np.asarray(self.rest_lengths, dtype=np.float64)
            if rl.shape != (len(edges),):
                raise TopologyError("rest_lengths must have one entry per edge")
            object.__setattr__(self, "rest_lengths", rl)
        if any(a.index < 0 or a.index >= n for a in self.anchors):
            raise TopologyError("anchor index out of range")

    def _connected(self) -> bool:
        n = self.num_keypoints
        if n == 0:
            return False
        adj = [[] for _ in range(n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        return bool(seen.all())

    @property
    def anchor_indices(self) -> np.ndarray:
        return np.array([a.index for a in self.anchors], dtype=np.int64)

    @property
    def anchor_roles(self) -> tuple:
        return tuple(a.role for a in self.anchors)

    def with_rest_lengths(self, rest_lengths: np.ndarray) -> "Topology":
        return replace(self, rest_lengths=np.asarray(rest_lengths, dtype=np.float64))


def grid_edges(rows: int, cols: int) -> list:
    """4-neighbor grid edges over row-major indices, sorted."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return sorted(edges)
