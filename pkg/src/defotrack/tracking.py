"""Sequence tracking: warm-started solves with per-frame anchor re-detection.

Anchors are re-detected independently at every frame; detections are matched
to anchor indices within each role class by optimal assignment against the
previous positions, which keeps indexing stable without appearance cues.
A temporal moving average is applied once at the end of the sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .anchors import AnchorDetection
from .core import build_index
from .errors import ConfigurationError, InvalidInputError
from .segmentation import SegmentedFrame
from .solver import SolveDiagnostics, SolverParams, gauss_seidel_solve
from .topology import KeypointSet, Topology


@dataclass(frozen=True)
class TrackingParams:
    solver: SolverParams = field(default_factory=SolverParams)
    smoothing_window: int = 5
    anchor_match_max_dist: float = 0.05  # m

    def __post_init__(self):
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigurationError("smoothing_window must be odd and >= 1")
        if self.anchor_match_max_dist <= 0:
            raise ConfigurationError("anchor_match_max_dist must be positive")


@dataclass
class FrameDiagnostics:
    flags: list
    resolved_anchors: np.ndarray | None = None  # (|A|, 3) positions used this frame
    retained_anchors: list = field(default_factory=list)  # anchor list positions kept from t-1
    solver: SolveDiagnostics | None = None


@dataclass(frozen=True)
class Trajectory:
    keypoints: np.ndarray        # (T, N, 3) final (smoothed) trajectory
    raw_keypoints: np.ndarray    # (T, N, 3) pre-smoothing solver output
    topology: Topology
    timestamps: np.ndarray       # (T,)
    diagnostics: tuple = ()

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        raw = np.asarray(self.raw_keypoints, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if kp.ndim != 3 or kp.shape[2] != 3 or kp.shape != raw.shape:
            raise InvalidInputError("keypoints must be (T, N, 3) and match raw_keypoints")
        if kp.shape[1] != self.topology.num_keypoints:
            raise InvalidInputError("keypoint count does not match topology")
        if ts.shape != (kp.shape[0],):
            raise InvalidInputError("timestamps must have one entry per frame")
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            raise InvalidInputError("timestamps must be strictly increasing")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "raw_keypoints", raw)
        object.__setattr__(self, "timestamps", ts)

    @property
    def num_frames(self) -> int:
        return self.keypoints.shape[0]


def match_anchors(detected: AnchorDetection | None, previous_positions: np.ndarray,
                  roles, max_dist: float):
    """Resolve per-frame anchor positions for every anchor index.

    Within each role class, detections are assigned to anchor indices by
    minimum-total-distance matching against the previous positions. Indices
    with no detection within max_dist keep their previous position.
    Returns (resolved (|A|, 3), retained index list into the anchor tuple).
    """
    prev = np.asarray(previous_positions, dtype=np.float64)
    resolved = prev.copy()
    retained = set(range(len(prev)))
    if detected is not None and len(detected.positions) > 0:
        for role in set(roles):
            prev_ids = [i for i, r in enumerate(roles) if r == role]
            det_ids = [j for j, r in enumerate(detected.roles) if r == role]
            if not prev_ids or not det_ids:
                continue
            cost = np.linalg.norm(
                prev[prev_ids][:, None, :] - detected.positions[det_ids][None, :, :], axis=2)
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if cost[r, c] <= max_dist:
                    resolved[prev_ids[r]] = detected.positions[det_ids[c]]
                    retained.discard(prev_ids[r])
    return resolved, sorted(retained)


def track_frame(x_prev: KeypointSet, seg: SegmentedFrame | None,
                detected: AnchorDetection | None, topology: Topology,
                params: TrackingParams = TrackingParams()):
    """One warm-started solve; carries x_prev forward when segmentation failed."""
    if len(x_prev) != topology.num_keypoints:
        raise InvalidInputError("x_prev size does not match topology")
    anchor_idx = topology.anchor_indices
    prev_anchor_pos = x_prev.positions[anchor_idx]
    frame_index = seg.frame_index if seg is not None else x_prev.frame_index + 1

    if seg is None or len(seg.cloud) == 0:
        diag = FrameDiagnostics(flags=["segmentation-failed"],
                                resolved_anchors=prev_anchor_pos.copy(),
                                retained_anchors=list(range(len(anchor_idx))))
        return KeypointSet(x_prev.positions.copy(), frame_index), diag

    resolved, retained = match_anchors(detected, prev_anchor_pos,
                                       topology.anchor_roles, params.anchor_match_max_dist)
    flags = []
    if retained:
        flags.append("anchors-retained")
    if detected is None:
        flags.append("detection-missing")
    index = build_index(seg.cloud)
    solved, sdiag = gauss_seidel_solve(x_prev, index, topology, resolved, params.solver)
    diag = FrameDiagnostics(flags=flags, resolved_anchors=resolved,
                            retained_anchors=retained, solver=sdiag)
    return KeypointSet(solved.positions, frame_index), diag


def smooth_positions(arr: np.ndarray, window: int) -> np.ndarray:
    """Symmetric moving average over frames, window shrunk near the boundaries."""
    if window < 1 or window % 2 == 0:
        raise InvalidInputError("window must be odd and >= 1")
    t_total = arr.shape[0]
    w = (window - 1) // 2
    out = np.empty_like(arr)
    for t in range(t_total):
        weff = min(w, t, t_total - 1 - t)
        out[t] = arr[t - weff:t + weff + 1].mean(axis=0)
    return out


def temporal_smooth(traj: Trajectory, window: int) -> Trajectory:
    """Re-smooth the raw trajectory with a different window; topology unchanged."""
    return replace(traj, keypoints=smooth_positions(traj.raw_keypoints, window))


def track_sequence(x1: KeypointSet, frames, topology: Topology,
                   params: TrackingParams = TrackingParams(),
                   timestamps=None) -> Trajectory:
    """Track frames t = 2..T from the initialized state, then smooth.

    frames is an iterable of (SegmentedFrame | None, AnchorDetection | None)
    pairs for t = 2..T, in time order. The returned trajectory includes the
    initialization frame, so it has len(frames) + 1 entries.
    """
    anchor_idx = topology.anchor_indices
    raw = [x1.positions.copy()]
    diags = [FrameDiagnostics(flags=[], resolved_anchors=x1.positions[anchor_idx].copy())]
    prev = x1
    for seg, det in frames:
        solved, diag = track_frame(prev, seg, det, topology, params)
        raw.append(solved.positions.copy())
        diags.append(diag)
        prev = solved
    raw = np.stack(raw)
    smoothed = smooth_positions(raw, params.smoothing_window)
    if timestamps is None:
        timestamps = np.arange(len(raw), dtype=np.float64)
    return Trajectory(smoothed, raw, topology, timestamps, tuple(diags))
