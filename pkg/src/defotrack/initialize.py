"""Initial keypoint configuration, topology, and rest lengths.

Index canonicalization keeps layouts reproducible across sessions:
  - chains run from the lexicographically smaller (x, y, z) leaf to the other
  - tree (branched) objects index junctions first in lexicographic order,
    then each branch outer-to-inner, branches sorted by their outer endpoint
  - 2D grids put the lexicographically smallest corner at (0, 0) and its
    contour-adjacent neighbor with larger x at (0, C-1)
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorDetection, AnchorParams, AnchorRole, detect_1d_anchors, detect_2d_anchors
from .classify import ClassifyParams, ObjectClass, classify_object
from .core import CameraModel, DepthFrame, PointCloud, as_points, build_index
from .errors import InvalidInputError, TopologyError
from .segmentation import SegmentedFrame
from .solver import SolverParams, gauss_seidel_solve
from .topology import Anchor, KeypointSet, Topology, grid_edges

_EXACT_ORDER_LIMIT = 16
_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class InitConfig:
    n_keypoints: int = 15                      # 1D objects
    grid_shape: tuple = (8, 8)                 # 2D objects
    classify_params: ClassifyParams = field(default_factory=ClassifyParams)
    anchor_params: AnchorParams = field(default_factory=AnchorParams)
    solver_params: SolverParams = field(default_factory=lambda: SolverParams(iterations=200))
    object_class: ObjectClass | None = None    # set to skip classification


def _lex_key(p) -> tuple:
    return (float(p[0]), float(p[1]), float(p[2]))


def warm_start_1d(cloud: PointCloud, anchors: AnchorDetection, n_total: int) -> np.ndarray:
    """Anchor positions followed by FPS-selected cloud points, n_total in all."""
    from .anchors import fps

    n_anchor = len(anchors.positions)
    if n_total <= n_anchor:
        raise InvalidInputError("n_total must exceed the anchor count")
    if len(cloud) < n_total:
        raise InvalidInputError(f"cloud has {len(cloud)} points, need {n_total}")
    sel = fps(cloud.points, n_total - n_anchor, seeds=anchors.positions)
    return np.vstack([anchors.positions, cloud.points[sel]])


def _find_member(points: np.ndarray, p) -> int:
    d = np.linalg.norm(points - np.asarray(p, dtype=np.float64), axis=1)
    i = int(np.argmin(d))
    if d[i] > _MATCH_TOL:
        raise InvalidInputError("endpoint is not a member of the point set")
    return i


def order_chain(points, leaf_anchors) -> np.ndarray:
    """Permutation from one leaf to the other minimizing total squared edge length.

    Exact (Held-Karp) up to 16 points; greedy nearest-neighbor plus 2-opt
    beyond that, which is a heuristic.
    """
    pts = as_points(points)
    n = len(pts)
    start = _find_member(pts, leaf_anchors[0])
    end = _find_member(pts, leaf_anchors[1])
    if start == end:
        raise InvalidInputError("leaf anchors must be two distinct points")
    if n == 2:
        return np.array([start, end], dtype=np.int64)
    interior = [i for i in range(n) if i not in (start, end)]
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    if n <= _EXACT_ORDER_LIMIT:
        mid = _held_karp(d2, start, end, interior)
    else:
        mid = _two_opt(d2, start, end, interior)
    return np.array([start] + mid + [end], dtype=np.int64)


def _held_karp(d2, start, end, interior):
    m = len(interior)
    full = (1 << m) - 1
    dp = [dict() for _ in range(1 << m)]
    for j in range(m):
        dp[1 << j][j] = (d2[start, interior[j]], -1)
    for mask in range(1, full + 1):
        entry = dp[mask]
        if not entry:
            continue
        for j, (cost, _) in list(entry.items()):
            pj = interior[j]
            rest = (~mask) & full
            nxt = rest
            while nxt:
                kbit = nxt & (-nxt)
                k = kbit.bit_length() - 1
                nm = mask | kbit
                cand = cost + d2[pj, interior[k]]
                cur = dp[nm].get(k)
                if cur is None or cand < cur[0]:
                    dp[nm][k] = (cand, j)
                nxt ^= kbit
    best_j, best_cost = -1, np.inf
    for j, (cost, _) in dp[full].items():
        total = cost + d2[interior[j], end]
        if total < best_cost or (total == best_cost and j < best_j):
            best_j, best_cost = j, total
    path = []
    mask, j = full, best_j
    while j != -1:
        path.append(interior[j])
        _, pj = dp[mask][j]
        mask ^= 1 << j
        j = pj
    return path[::-1]


def _two_opt(d2, start, end, interior):
    remaining = set(interior)
    path = [start]
    cur = start
    while remaining:
        nxt = min(remaining, key=lambda i: (d2[cur, i], i))
        path.append(nxt)
        remaining.discard(nxt)
        cur = nxt
    path.append(end)
    improved = True
    while improved:
        improved = False
        for a in range(1, len(path) - 2):
            for b in range(a + 1, len(path) - 1):
                before = d2[path[a - 1], path[a]] + d2[path[b], path[b + 1]]
                after = d2[path[a - 1], path[b]] + d2[path[a], path[b + 1]]
                if after < before - 1e-15:
                    path[a:b + 1] = path[a:b + 1][::-1]
                    improved = True
    return path[1:-1]


def build_1d_topology(branch_points, junction_positions=()) -> tuple[KeypointSet, Topology]:
    """Assemble a chain or tree of chains from ordered per-branch point lists.

    Branch endpoints equal to one of junction_positions (within 1e-9) share
    that junction's keypoint index; every branch endpoint becomes an anchor.
    """
    branch_points = [as_points(b) for b in branch_points]
    if not branch_points or any(len(b) < 2 for b in branch_points):
        raise TopologyError("each branch needs at least 2 points")
    junctions = as_points(junction_positions) if len(junction_positions) else np.zeros((0, 3))

    def junction_id(p):
        if len(junctions) == 0:
            return None
        d = np.linalg.norm(junctions - p, axis=1)
        j = int(np.argmin(d))
        return j if d[j] <= _MATCH_TOL else None

    # canonical junction order, then canonical branch orientation and order
    jorder = sorted(range(len(junctions)), key=lambda j: _lex_key(junctions[j]))
    jindex = {old: new for new, old in enumerate(jorder)}
    junctions = junctions[jorder] if len(junctions) else junctions

    oriented = []
    for b in branch_points:
        ja, jb = junction_id(b[0]), junction_id(b[-1])
        if ja is not None and jb is None:
            b = b[::-1]
        elif ja is not None and jb is not None and _lex_key(b[-1]) < _lex_key(b[0]):
            b = b[::-1]
        elif ja is None and jb is None and _lex_key(b[-1]) < _lex_key(b[0]):
            b = b[::-1]
        oriented.append(b)
    oriented.sort(key=lambda b: _lex_key(b[0]))

    positions = [junctions[j] for j in range(len(junctions))]
    anchors = [Anchor(j, AnchorRole.JUNCTION) for j in range(len(junctions))]
    index_paths = []
    edges = set()
    for b in oriented:
        path = []
        for p in b:
            jid = junction_id(p)
            if jid is not None:
                path.append(jindex[jid])
            else:
                path.append(len(positions))
                positions.append(p)
        for u, v in zip(path[:-1], path[1:]):
            if u == v:
                raise TopologyError("branch visits the same keypoint twice in a row")
            edges.add((min(u, v), max(u, v)))
        if junction_id(b[0]) is None:
            anchors.append(Anchor(path[0], AnchorRole.LEAF))
        if junction_id(b[-1]) is None:
            anchors.append(Anchor(path[-1], AnchorRole.LEAF))
        index_paths.append(tuple(path))

    positions = np.asarray(positions)
    anchors = sorted(set(anchors), key=lambda a: a.index)
    topo = Topology(
        object_class=ObjectClass.ONE_DIM,
        num_keypoints=len(positions),
        edges=tuple(sorted(edges)),
        anchors=tuple(anchors),
        branches=tuple(index_paths),
    )
    return KeypointSet(positions), topo


def _polyline_distance(p, poly) -> float:
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = (ab ** 2).sum(axis=1)
    denom[denom == 0] = 1.0
    t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.linalg.norm(p - proj, axis=1).min())


def _sample_polyline(poly: np.ndarray, fractions) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        return np.repeat(poly[:1], len(fractions), axis=0)
    targets = np.asarray(fractions) * total
    out = np.empty((len(targets), 3))
    for d in range(3):
        out[:, d] = np.interp(targets, s, poly[:, d])
    return out


def _allocate(total: int, lengths: np.ndarray) -> list:
    """Largest-remainder split of `total` proportional to lengths."""
    lengths = np.asarray(lengths, dtype=np.float64)
    if total <= 0:
        return [0] * len(lengths)
    quota = total * lengths / lengths.sum()
    base = np.floor(quota).astype(int)
    rem = total - int(base.sum())
    frac_order = sorted(range(len(lengths)), key=lambda b: (-(quota[b] - base[b]), b))
    for b in frac_order[:rem]:
        base[b] += 1
    return base.tolist()


def _init_one_dim(cloud: PointCloud, det: AnchorDetection, n_total: int):
    leaf_ids = det.by_role(AnchorRole.LEAF)
    junc_ids = det.by_role(AnchorRole.JUNCTION)
    warm = warm_start_1d(cloud, det, n_total)
    n_anchor = len(det.positions)
    free = warm[n_anchor:]

    if len(junc_ids) == 0:
        if len(leaf_ids) != 2:
            raise TopologyError(f"chain object with {len(leaf_ids)} leaves")
        a, b = det.positions[leaf_ids[0]], det.positions[leaf_ids[1]]
        if _lex_key(b) < _lex_key(a):
            a, b = b, a
        pts = np.vstack([[a], [b], free])
        perm = order_chain(pts, (a, b))
        return build_1d_topology([pts[perm]])

    if not det.branches:
        raise TopologyError("branched object without skeleton branches")
    lengths = np.array([br.arc_length for br in det.branches])
    interior_counts = _allocate(len(free), lengths)

    # nearest-branch partition of the free warm-start points, then rebalance
    # to the allocated counts (surplus points migrate to deficit branches)
    nb = len(det.branches)
    dists = np.array([[_polyline_distance(p, br.polyline) for br in det.branches]
                      for p in free]) if len(free) else np.zeros((0, nb))
    assigned = [[] for _ in range(nb)]
    for i in range(len(free)):
        assigned[int(np.argmin(dists[i]))].append(i)
    pool = []
    for b in range(nb):
        members = sorted(assigned[b], key=lambda i: (dists[i, b], i))
        surplus = members[interior_counts[b]:]
        assigned[b] = members[:interior_counts[b]]
        pool.extend(surplus)
    for b in range(nb):
        while len(assigned[b]) < interior_counts[b]:
            i = min(pool, key=lambda i: (dists[i, b], i))
            pool.remove(i)
            assigned[b].append(i)

    branch_chains = []
    for b, br in enumerate(det.branches):
        pa, pb = det.positions[br.anchor_a], det.positions[br.anchor_b]
        pts = np.vstack([[pa], free[assigned[b]], [pb]]) if assigned[b] else np.vstack([[pa], [pb]])
        perm = order_chain(pts, (pa, pb))
        branch_chains.append(pts[perm])
    return build_1d_topology(branch_chains, det.positions[junc_ids])


def init_grid_2d(contour_anchors: AnchorDetection, grid_shape) -> tuple[KeypointSet, Topology]:
    """Rectangular grid keypoints from contour anchors.

    The 4 anchors with maximal pairwise spread become the grid corners;
    boundary keypoints interpolate the detected contour at uniform arc
    length (straight chords when no dense contour is available); interior
    keypoints are bilinear in the corners.
    """
    rows, cols = int(grid_shape[0]), int(grid_shape[1])
    if rows < 2 or cols < 2:
        raise InvalidInputError("grid_shape must be at least 2x2")
    pos = contour_anchors.positions
    if len(pos) < 4:
        raise InvalidInputError("need at least 4 contour anchors")
    contour = contour_anchors.contour

    best, best_spread = None, -1.0
    for combo in itertools.combinations(range(len(pos)), 4):
        spread = sum(np.linalg.norm(pos[a] - pos[b])
                     for a, b in itertools.combinations(combo, 2))
        if spread > best_spread:
            best, best_spread = combo, spread
    corners = np.array([pos[i] for i in best])

    # cyclic order of the corners: along the contour when we have one,
    # otherwise by angle in the plane of best fit around the centroid
    if contour is not None and len(contour) >= 4:
        cidx = [int(np.argmin(np.linalg.norm(contour - c, axis=1))) for c in corners]
        cyc = sorted(range(4), key=lambda k: cidx[k])
    else:
        centered = corners - corners.mean(axis=0)
        _, _, vt = np.linalg.svd(centered)
        uv = centered @ vt[:2].T
        ang = np.arctan2(uv[:, 1], uv[:, 0])
        cyc = sorted(range(4), key=lambda k: ang[k])

    ring = [corners[k] for k in cyc]
    k00 = min(range(4), key=lambda k: _lex_key(ring[k]))
    prev_c, next_c = ring[(k00 - 1) % 4], ring[(k00 + 1) % 4]
    forward = next_c[0] >= prev_c[0]
    if forward:
        ordered = [ring[(k00 + i) % 4] for i in range(4)]
    else:
        ordered = [ring[(k00 - i) % 4] for i in range(4)]
    c00, c0c, crc, cr0 = ordered

    def boundary_chain(a, b, count):
        if contour is None or len(contour) < 4:
            t = np.linspace(0.0, 1.0, count)[:, None]
            return a * (1 - t) + b * t
        ia = int(np.argmin(np.linalg.norm(contour - a, axis=1)))
        ib = int(np.argmin(np.linalg.norm(contour - b, axis=1)))
        m = len(contour)
        others = [int(np.argmin(np.linalg.norm(contour - c, axis=1)))
                  for c in (c00, c0c, crc, cr0)]
        fwd = [contour[(ia + s) % m] for s in range((ib - ia) % m + 1)]
        fwd_hits = sum(1 for o in others
                       if o not in (ia, ib) and (o - ia) % m < (ib - ia) % m)
        if fwd_hits == 0 and len(fwd) >= 2:
            seg = np.asarray(fwd)
        else:
            bwd = [contour[(ia - s) % m] for s in range((ia - ib) % m + 1)]
            seg = np.asarray(bwd)
        return _sample_polyline(seg, np.linspace(0.0, 1.0, count))

    grid = np.zeros((rows, cols, 3))
    grid[0, :] = boundary_chain(c00, c0c, cols)
    grid[rows - 1, :] = boundary_chain(cr0, crc, cols)
    grid[:, 0] = boundary_chain(c00, cr0, rows)
    grid[:, cols - 1] = boundary_chain(c0c, crc, rows)
    for r in range(1, rows - 1):
        v = r / (rows - 1)
        for c in range(1, cols - 1):
            u = c / (cols - 1)
            grid[r, c] = ((1 - u) * (1 - v) * c00 + u * (1 - v) * c0c
                          + (1 - u) * v * cr0 + u * v * crc)

    positions = grid.reshape(-1, 3)
    corner_idx = [0, cols - 1, (rows - 1) * cols, rows * cols - 1]
    anchors = [Anchor(i, AnchorRole.CONTOUR) for i in corner_idx]

    # extra contour anchors map to their nearest boundary keypoint
    boundary_kp = sorted(set(
        [c for c in range(cols)] + [(rows - 1) * cols + c for c in range(cols)]
        + [r * cols for r in range(rows)] + [r * cols + cols - 1 for r in range(rows)]))
    taken = set(corner_idx)
    for i in range(len(pos)):
        if i in best:
            continue
        d = [(np.linalg.norm(positions[k] - pos[i]), k) for k in boundary_kp if k not in taken]
        if not d:
            break
        _, k = min(d)
        taken.add(k)
        anchors.append(Anchor(k, AnchorRole.CONTOUR))
        positions[k] = pos[i]

    topo = Topology(
        object_class=ObjectClass.TWO_DIM,
        num_keypoints=rows * cols,
        edges=tuple(grid_edges(rows, cols)),
        anchors=tuple(sorted(anchors, key=lambda a: a.index)),
        grid_shape=(rows, cols),
    )
    return KeypointSet(positions), topo


def compute_rest_lengths(x: KeypointSet, topology: Topology) -> Topology:
    """Uniform per-branch (1D) or per-grid-direction (2D) mean edge lengths."""
    p = x.positions
    if len(p) != topology.num_keypoints:
        raise InvalidInputError("keypoint count does not match topology")
    measured = {e: float(np.linalg.norm(p[e[0]] - p[e[1]])) for e in topology.edges}
    rest = dict(measured)
    if topology.object_class == ObjectClass.ONE_DIM and topology.branches:
        for path in topology.branches:
            es = [(min(u, v), max(u, v)) for u, v in zip(path[:-1], path[1:])]
            mean = float(np.mean([measured[e] for e in es]))
            for e in es:
                rest[e] = mean
    elif topology.object_class == ObjectClass.TWO_DIM:
        _, cols = topology.grid_shape
        row_edges = [e for e in topology.edges if e[1] == e[0] + 1]
        col_edges = [e for e in topology.edges if e[1] == e[0] + cols]
        for es in (row_edges, col_edges):
            if es:
                mean = float(np.mean([measured[e] for e in es]))
                for e in es:
                    rest[e] = mean
    else:
        mean = float(np.mean(list(measured.values())))
        rest = {e: mean for e in topology.edges}
    return topology.with_rest_lengths(np.array([rest[e] for e in topology.edges]))


def initialize(seg: SegmentedFrame, depth: DepthFrame | None, cam: CameraModel,
               config: InitConfig = InitConfig()):
    """Full first-frame pipeline: classify, detect anchors, build topology, solve.

    Returns (KeypointSet, Topology, AnchorDetection). At return the anchors
    hold exactly and every non-anchor keypoint is a member of the segmented
    cloud.
    """
    cls = config.object_class
    if cls is None:
        cls = classify_object(seg.cloud, config.classify_params)
    if cls == ObjectClass.ONE_DIM:
        det = detect_1d_anchors(seg.cloud, depth, cam, config.anchor_params)
        x_init, topo = _init_one_dim(seg.cloud, det, config.n_keypoints)
    else:
        det = detect_2d_anchors(seg.cloud, cam, config.anchor_params, depth)
        x_init, topo = init_grid_2d(det, config.grid_shape)
    topo = compute_rest_lengths(x_init, topo)
    anchor_pos = x_init.positions[topo.anchor_indices]
    solved, _ = gauss_seidel_solve(x_init, build_index(seg.cloud), topo,
                                   anchor_pos, config.solver_params)
    return KeypointSet(solved.positions, seg.frame_index), topo, det
