"""Anchor point detection.

1D objects: project the segmented cloud to a binary mask, thin it to a
skeleton, build a Euclidean MST over the skeleton pixels, and classify nodes
by MST degree (1 = leaf, >= 3 = junction). Degree-2 nodes are never anchors.
Anchors are lifted back to 3D through the pixels the cloud came from.

2D objects: trace the outer boundary of the largest mask region and spread
contour anchors along it with farthest point sampling.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree

from .core import CameraModel, DepthFrame, PointCloud, as_points, project_points
from .errors import ConfigurationError, DetectionError, InvalidInputError

_DENSE_MST_LIMIT = 64  # below this, skip the kNN candidate graph entirely


class AnchorRole(enum.Enum):
    LEAF = "leaf"
    JUNCTION = "junction"
    CONTOUR = "contour"


@dataclass(frozen=True)
class AnchorParams:
    dilation_px: int = 1
    merge_radius_px: float = 5.0      # junction pixel clusters within this merge
    min_branch_px: float = 8.0        # skeleton spurs shorter than this are pruned
    lift_search_px: int = 3           # ring search radius for 3D lifting
    leaf_extend_radius: float = 0.02  # m; 0 disables leaf tip refinement
    num_contour_anchors: int = 4

    def __post_init__(self):
        if self.dilation_px < 0 or self.lift_search_px < 0:
            raise ConfigurationError("pixel radii must be non-negative")
        if self.num_contour_anchors < 4:
            raise ConfigurationError("need at least 4 contour anchors")


@dataclass(frozen=True)
class BinaryMask:
    mask: np.ndarray  # (H, W) bool
    cam: CameraModel

    def __post_init__(self):
        if self.mask.shape != (self.cam.height, self.cam.width):
            raise ConfigurationError("mask dimensions do not match camera")


@dataclass(frozen=True)
class SkeletonGraph:
    nodes: np.ndarray       # (K, 2) int pixel coords (row, col)
    edges: list             # [(i, j), ...] with i < j, sorted
    weights: np.ndarray     # Euclidean pixel distance per edge
    degree: np.ndarray      # per-node incident edge count

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class Branch:
    """Skeleton path between two anchors, ordered from anchor_a to anchor_b."""

    anchor_a: int
    anchor_b: int
    polyline: np.ndarray  # (P, 3)

    @property
    def arc_length(self) -> float:
        if len(self.polyline) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())


@dataclass(frozen=True)
class AnchorDetection:
    positions: np.ndarray           # (K, 3)
    roles: tuple                    # K AnchorRole values
    branches: tuple = ()            # 1D: Branch decomposition of the skeleton
    contour: np.ndarray | None = None  # 2D: ordered boundary polyline (B, 3)

    def __post_init__(self):
        object.__setattr__(self, "positions", as_points(self.positions))
        if not np.isfinite(self.positions).all():
            raise InvalidInputError("anchor positions must be finite")
        if len(self.roles) != len(self.positions):
            raise InvalidInputError("roles must match positions")

    def by_role(self, role: AnchorRole) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r == role], dtype=np.int64)


def rasterize_mask(cloud: PointCloud, cam: CameraModel, dilation_px: int = 0) -> BinaryMask:
    """Mark pixels hit by projected cloud points, then dilate to close gaps."""
    if len(cloud) == 0:
        raise InvalidInputError("cannot rasterize an empty cloud")
    u, v, in_view = project_points(cloud.points, cam)
    if not in_view.any():
        raise DetectionError("all points project out of view")
    cols = np.rint(u[in_view]).astype(np.int64)
    rows = np.rint(v[in_view]).astype(np.int64)
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    mask[rows, cols] = True
    if dilation_px > 0:
        mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool),
                                       iterations=dilation_px)
    return BinaryMask(mask, cam)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen iterative thinning to a 1-px-wide 8-connected skeleton.

    Runs until a full two-subiteration pass deletes nothing, which makes the
    operation idempotent on its own output.
    """
    img = np.ascontiguousarray(mask, dtype=bool).copy()
    while True:
        changed = False
        for step in (0, 1):
            pad = np.pad(img, 1)
            p2 = pad[:-2, 1:-1]
            p3 = pad[:-2, 2:]
            p4 = pad[1:-1, 2:]
            p5 = pad[2:, 2:]
            p6 = pad[2:, 1:-1]
            p7 = pad[2:, :-2]
            p8 = pad[1:-1, :-2]
            p9 = pad[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
            b = sum(x.astype(np.uint8) for x in ring[:-1])
            a = sum((~ring[i] & ring[i + 1]).astype(np.uint8) for i in range(8))
            if step == 0:
                cond = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                cond = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            delete = img & (b >= 2) & (b <= 6) & (a == 1) & cond
            if delete.any():
                img &= ~delete
                changed = True
        if not changed:
            return img


def build_mst(pixels: np.ndarray) -> SkeletonGraph:
    """Minimum spanning tree of the complete Euclidean graph over pixels.

    For speed, candidate edges are limited to the 12 nearest neighbors of each
    pixel; if that graph is disconnected the complete graph is used instead,
    so the result is always a single spanning tree.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise InvalidInputError("pixels must be an (K, 2) array")
    n = len(pixels)
    if n == 0:
        raise InvalidInputError("need at least one pixel")
    if n == 1:
        return SkeletonGraph(pixels, [], np.zeros(0), np.zeros(1, dtype=np.int64))
    pts = pixels.astype(np.float64)

    def _mst_edges(graph):
        tree = minimum_spanning_tree(graph)
        coo = tree.tocoo()
        return coo.row, coo.col, coo.data

    if n <= _DENSE_MST_LIMIT:
        diff = pts[:, None, :] - pts[None, :, :]
        dense = np.sqrt((diff ** 2).sum(axis=2))
        rows, cols, data = _mst_edges(coo_matrix(np.triu(dense)))
    else:
        k = min(n - 1, 12)
        tree = cKDTree(pts)
        dists, idxs = tree.query(pts, k=k + 1)
        src = np.repeat(np.arange(n), k)
        dst = idxs[:, 1:].ravel()
        w = dists[:, 1:].ravel()
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        key = lo * n + hi
        _, uniq = np.unique(key, return_index=True)
        graph = coo_matrix((w[uniq], (lo[uniq], hi[uniq])), shape=(n, n))
        rows, cols, data = _mst_edges(graph)
        if len(data) < n - 1:  # candidate graph disconnected
            diff = pts[:, None, :] - pts[None, :, :]
            dense = np.sqrt((diff ** 2).sum(axis=2))
            rows, cols, data = _mst_edges(coo_matrix(np.triu(dense)))

    order = np.lexsort((np.maximum(rows, cols), np.minimum(rows, cols)))
    edges = [(int(min(r, c)), int(max(r, c)))
             for r, c in zip(rows[order], cols[order])]
    weights = data[order]
    degree = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    return SkeletonGraph(pixels, edges, weights, degree)


def fps(points, k: int, seeds=None) -> np.ndarray:
    """Greedy farthest point sampling.

    Returns k indices into points, excluding the seeds, in selection order.
    With no seeds the selection starts at index 0. Ties break to the lowest
    index.
    """
    pts = as_points(points)
    n = len(pts)
    if k < 0 or k > n:
        raise InvalidInputError(f"cannot select {k} of {n} points")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    selected = []
    if seeds is not None and len(seeds) > 0:
        seeds = as_points(seeds)
        dists = np.linalg.norm(pts[:, None, :] - seeds[None, :, :], axis=2).min(axis=1)
    else:
        selected.append(0)
        dists = np.linalg.norm(pts - pts[0], axis=1)
    while len(selected) < k:
        i = int(np.argmax(dists))
        selected.append(i)
        dists = np.minimum(dists, np.linalg.norm(pts - pts[i], axis=1))
    return np.asarray(selected, dtype=np.int64)


class PixelLifter:
    """Lift mask pixels to 3D via the cloud's pixel provenance.

    Looks up the cloud point observed at a pixel, searching outward by ring
    up to search_px when the pixel itself has no observation. Falls back to
    depth-image back-projection when the cloud lacks pixel_index.
    """

    def __init__(self, cloud: PointCloud, cam: CameraModel,
                 depth: DepthFrame | None = None, search_px: int = 3):
        self.cam = cam
        self.depth = depth
        self.points = cloud.points
        self._from_pixels = cloud.pixel_index is not None
        if self._from_pixels:
            h, w = cam.height, cam.width
            self.idx_img = np.full((h, w), -1, dtype=np.int64)
            r, c = cloud.pixel_index[:, 0], cloud.pixel_index[:, 1]
            # reversed write order so the lowest point index wins collisions
            self.idx_img[r[::-1], c[::-1]] = np.arange(len(cloud))[::-1]
        elif depth is None:
            raise InvalidInputError("cloud has no pixel_index and no depth frame given")
        s = search_px
        offs = [(dr, dc) for dr in range(-s, s + 1) for dc in range(-s, s + 1)]
        offs.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
        self.offsets = offs

    def lift(self, row: int, col: int) -> np.ndarray | None:
        h, w = self.cam.height, self.cam.width
        for dr, dc in self.offsets:
            r, c = row + dr, col + dc
            if not (0 <= r < h and 0 <= c < w):
                continue
            if self._from_pixels:
                if self.idx_img[r, c] >= 0:
                    return self.points[self.idx_img[r, c]].copy()
            else:
                z = self.depth.depth[r, c]
                if np.isfinite(z) and z > 0:
                    x = (c - self.cam.cx) * z / self.cam.fx
                    y = (r - self.cam.cy) * z / self.cam.fy
                    return self.cam.world_from_camera(np.array([[x, y, z]]))[0]
        return None


def _prune_spurs(graph: SkeletonGraph, min_len: float):
    """Drop leaf chains shorter than min_len that end at a junction.

    Returns (kept node indices, adjacency dict over kept nodes).
    """
    adj = {i: {} for i in range(len(graph.nodes))}
    for (i, j), w in zip(graph.edges, graph.weights):
        adj[i][j] = w
        adj[j][i] = w
    removed = set()
    while True:
        deg = {i: len(nb) for i, nb in adj.items() if i not in removed}
        leaves = sorted(i for i, d in deg.items() if d == 1)
        pruned_any = False
        for leaf in leaves:
            if leaf in removed:
                continue
            path = [leaf]
            length = 0.0
            prev, cur = -1, leaf
            while True:
                nbs = [j for j in adj[cur] if j != prev and j not in removed]
                if len(nbs) != 1:
                    break
                nxt = nbs[0]
                if deg.get(nxt, 0) >= 3:
                    # spur terminates at a junction
                    if length + adj[cur][nxt] < min_len:
                        for p in path:
                            removed.add(p)
                        pruned_any = True
                    break
                length += adj[cur][nxt]
                if length >= min_len:
                    break
                path.append(nxt)
                prev, cur = cur, nxt
        if not pruned_any:
            break
    kept = [i for i in range(len(graph.nodes)) if i not in removed]
    adj_kept = {i: {j: w for j, w in adj[i].items() if j not in removed} for i in kept}
    return kept, adj_kept


def _merge_junctions(nodes: np.ndarray, junction_ids: list, radius: float):
    """Single-linkage clusters of junction pixels; representative nearest centroid."""
    if not junction_ids:
        return [], {}
    coords = nodes[junction_ids].astype(float)
    parent = list(range(len(junction_ids)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = cKDTree(coords)
    for a, b in sorted(tree.query_pairs(radius)):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for local, node in enumerate(junction_ids):
        groups.setdefault(find(local), []).append(node)
    clusters = [sorted(groups[r]) for r in sorted(groups)]
    reps = []
    member_of = {}
    for ci, members in enumerate(clusters):
        centroid = nodes[members].mean(axis=0)
        d = np.linalg.norm(nodes[members] - centroid, axis=1)
        reps.append(members[int(np.argmin(d))])
        for m in members:
            member_of[m] = ci
    return reps, member_of


def _trace_branches(adj: dict, special: set):
    """Paths between special nodes through degree-2 chains; each edge used once."""
    visited = set()
    branches = []
    for s in sorted(special):
        for nxt in sorted(adj.get(s, {})):
            if (s, nxt) in visited:
                continue
            path = [s]
            prev, cur = s, nxt
            visited.add((s, nxt))
            visited.add((nxt, s))
            while cur not in special:
                path.append(cur)
                nbs = [j for j in adj[cur] if j != prev]
                if not nbs:
                    break  # dangling chain end (should not happen post-prune)
                prev, cur = cur, nbs[0]
                visited.add((prev, cur))
                visited.add((cur, prev))
            path.append(cur)
            if cur in special:
                branches.append(path)
    return branches


def detect_1d_anchors(cloud: PointCloud, depth: DepthFrame | None, cam: CameraModel,
                      params: AnchorParams = AnchorParams()) -> AnchorDetection:
    """Leaf and junction anchors of a curve-like object, with skeleton branches."""
    bm = rasterize_mask(cloud, cam, params.dilation_px)
    skel = skeletonize(bm.mask)
    pixels = np.argwhere(skel)
    if len(pixels) < 2:
        raise DetectionError("skeleton has fewer than 2 pixels")
    graph = build_mst(pixels)
    kept, adj = _prune_spurs(graph, params.min_branch_px)
    if len(kept) < 2:
        raise DetectionError("skeleton empty after spur pruning")
    deg = {i: len(adj[i]) for i in kept}
    leaves = sorted(i for i in kept if deg[i] == 1)
    junction_pixels = sorted(i for i in kept if deg[i] >= 3)
    reps, member_of = _merge_junctions(graph.nodes, junction_pixels, params.merge_radius_px)
    if len(leaves) < 2:
        raise DetectionError(f"found {len(leaves)} leaves, need at least 2")

    lifter = PixelLifter(cloud, cam, depth, params.lift_search_px)
    cloud_tree = cKDTree(cloud.points) if params.leaf_extend_radius > 0 else None

    def lift_node(node):
        r, c = graph.nodes[node]
        return lifter.lift(int(r), int(c))

    positions = []
    roles = []
    anchor_of_node = {}
    for leaf in leaves:
        p = lift_node(leaf)
        if p is None:
            continue
        anchor_of_node[leaf] = len(positions)
        positions.append(p)
        roles.append(AnchorRole.LEAF)
    n_leaves = len(positions)
    if n_leaves < 2:
        raise DetectionError("fewer than 2 leaves could be lifted to 3D")
    rep_anchor = {}
    for ci, rep in enumerate(reps):
        p = lift_node(rep)
        if p is None:
            continue
        rep_anchor[ci] = len(positions)
        positions.append(p)
        roles.append(AnchorRole.JUNCTION)

    # branch decomposition between leaves and junction clusters
    special = set(leaves) | set(junction_pixels)
    raw_branches = _trace_branches(adj, special)
    branches = []
    for path in raw_branches:
        a, b = path[0], path[-1]
        ca = member_of.get(a)
        cb = member_of.get(b)
        if ca is not None and ca == cb:
            continue  # internal hop within one junction cluster
        aid = anchor_of_node.get(a, rep_anchor.get(ca) if ca is not None else None)
        bid = anchor_of_node.get(b, rep_anchor.get(cb) if cb is not None else None)
        if aid is None or bid is None or aid == bid:
            continue
        poly = [lifter.lift(int(r), int(c)) for r, c in graph.nodes[path]]
        poly = np.array([p for p in poly if p is not None])
        if len(poly) < 2:
            continue
        branches.append(Branch(aid, bid, poly))

    positions = np.asarray(positions)
    if params.leaf_extend_radius > 0 and cloud_tree is not None:
        positions = _extend_leaves(positions, roles, branches, cloud,
                                   cloud_tree, params.leaf_extend_radius)
    return AnchorDetection(positions, tuple(roles), tuple(branches))


def _extend_leaves(positions, roles, branches, cloud, cloud_tree, radius):
    """Push each leaf anchor to the outermost cloud point along its branch direction.

    Thinning erodes skeleton ends by roughly half the mask width, so the raw
    leaf pixel sits short of the physical object tip.
    """
    out = positions.copy()
    for k, role in enumerate(roles):
        if role != AnchorRole.LEAF:
            continue
        direction = None
        for br in branches:
            if br.anchor_a == k and len(br.polyline) >= 2:
                inner = br.polyline[min(5, len(br.polyline) - 1)]
                direction = positions[k] - inner
                break
            if br.anchor_b == k and len(br.polyline) >= 2:
                inner = br.polyline[max(-6, -len(br.polyline))]
                direction = positions[k] - inner
                break
        if direction is None or np.linalg.norm(direction) < 1e-12:
            continue
        direction = direction / np.linalg.norm(direction)
        cand = cloud_tree.query_ball_point(positions[k], radius)
        if not cand:
            continue
        cand_pts = cloud.points[cand]
        proj = (cand_pts - positions[k]) @ direction
        out[k] = cand_pts[int(np.argmax(proj))]
    return out


def _moore_trace(region: np.ndarray) -> np.ndarray:
    """Ordered outer boundary of an 8-connected region (Moore neighbor tracing)."""
    h, w = region.shape
    rs, cs = np.nonzero(region)
    start = (int(rs[0]), int(cs[0]))  # topmost, then leftmost
    dirs = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and region[r, c]

    boundary = []
    state = (start, 6)  # backtrack points west of start, guaranteed background
    seen = set()
    while state not in seen:
        seen.add(state)
        (p, bdir) = state
        boundary.append(p)
        nxt = None
        for step in range(1, 9):
            k = (bdir + step) % 8
            q = (p[0] + dirs[k][0], p[1] + dirs[k][1])
            if fg(*q):
                nxt = (q, k)
                break
        if nxt is None:
            break  # isolated pixel
        q, k = nxt
        bg = (p[0] + dirs[(k - 1) % 8][0], p[1] + dirs[(k - 1) % 8][1])
        bdir_next = dirs.index((bg[0] - q[0], bg[1] - q[1]))
        state = (q, bdir_next)
    return np.asarray(boundary, dtype=np.int64)


def detect_2d_anchors(cloud: PointCloud, cam: CameraModel,
                      params: AnchorParams = AnchorParams(),
                      depth: DepthFrame | None = None) -> AnchorDetection:
    """Contour anchors of a surface-like object, spread by FPS along the boundary."""
    bm = rasterize_mask(cloud, cam, params.dilation_px)
    labeled, n_regions = ndimage.label(bm.mask, structure=np.ones((3, 3), int))
    if n_regions == 0:
        raise DetectionError("mask has no region")
    counts = np.bincount(labeled.ravel())[1:]
    region = labeled == (int(np.argmax(counts)) + 1)
    boundary_px = _moore_trace(region)

    lifter = PixelLifter(cloud, cam, depth, params.lift_search_px)
    contour = [lifter.lift(int(r), int(c)) for r, c in boundary_px]
    contour = np.array([p for p in contour if p is not None])
    if len(contour) < params.num_contour_anchors:
        raise DetectionError("boundary too short for requested anchor count")

    centroid = cloud.points.mean(axis=0)
    seed_idx = int(np.argmax(np.linalg.norm(contour - centroid, axis=1)))
    rest = fps(contour, params.num_contour_anchors - 1, seeds=contour[seed_idx][None, :])
    anchor_idx = [seed_idx] + rest.tolist()
    positions = contour[anchor_idx]
    roles = tuple([AnchorRole.CONTOUR] * len(anchor_idx))
    return AnchorDetection(positions, roles, contour=contour)
