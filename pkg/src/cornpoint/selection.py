"""Candidate filtering, heuristic scoring and multi-frame consensus."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .detection import MaskFeatures, StalkCandidate

GRIPPER_WIDTH = 0.076


@dataclass(frozen=True)
class WorkspaceBox:
    x_min: float = 0.25
    x_max: float = 0.75
    y_min: float = -0.55
    y_max: float = 0.55
    z_min: float = 0.02
    z_max: float = 0.15

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_min < self.z_max):
            raise ValueError("workspace bounds must satisfy min < max on every axis")

    def contains(self, p) -> bool:
        x, y, z = p
        return (self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max
                and self.z_min <= z <= self.z_max)


@dataclass
class SelectionConfig:
    gripper_clearance: float = 0.080
    n_frames: int = 5
    cluster_radius: float = 0.020
    z_target: float = 0.05
    workspace: WorkspaceBox = WorkspaceBox()

    def validate(self) -> "SelectionConfig":
        if self.gripper_clearance < GRIPPER_WIDTH:
            raise ValueError(f"gripper_clearance must be >= gripper width {GRIPPER_WIDTH}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.cluster_radius <= 0:
            raise ValueError("cluster_radius must be positive")
        return self


class RepositionReason(str, Enum):
    NO_DETECTIONS = "NoDetections"
    ALL_FILTERED = "AllFiltered"
    NO_CLUSTER = "NoCluster"


@dataclass(frozen=True)
class RepositionSignal:
    reason: RepositionReason

    def to_dict(self) -> dict:
        return {"reposition": self.reason.value}


@dataclass
class InsertionTarget:
    point: np.ndarray
    approach_direction: np.ndarray
    source_cluster_size: int
    candidate: Optional[StalkCandidate] = None

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "approach_direction": self.approach_direction.tolist(),
            "source_cluster_size": self.source_cluster_size,
        }


def score(features: MaskFeatures) -> float:
    """c^2 * w * h^(1/3) * (1 - d)."""
    return features.c**2 * features.w * np.cbrt(features.h) * (1.0 - features.d)


def filter_workspace(cands: Sequence[StalkCandidate], box: WorkspaceBox) -> List[StalkCandidate]:
    return [c for c in cands if box.contains(c.insertion_point)]


def filter_spacing(cands: Sequence[StalkCandidate], clearance: float) -> List[StalkCandidate]:
    """Drop both members of every pair closer than ``clearance`` horizontally."""
    if len(cands) < 2:
        return list(cands)
    xy = np.array([c.insertion_point[:2] for c in cands])
    dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    blocked = (dist < clearance).any(axis=1)
    return [c for c, b in zip(cands, blocked) if not b]


def _rank_key(c: StalkCandidate):
    return (-score(c.features), c.features.d, c.instance_id)


def select_frame_best(cands: Sequence[StalkCandidate]) -> Optional[StalkCandidate]:
    """Highest score; ties go to smaller d, then lower instance id."""
    if not cands:
        return None
    return min(cands, key=_rank_key)


def approach_direction(camera_origin, point) -> np.ndarray:
    v = np.asarray(point, dtype=np.float64)[:2] - np.asarray(camera_origin, dtype=np.float64)[:2]
    n = np.linalg.norm(v)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0])
    return np.array([v[0] / n, v[1] / n, 0.0])


def single_linkage(points: np.ndarray, radius: float) -> np.ndarray:
    """Cluster labels where points chained by gaps <= ``radius`` share a label."""
    if len(points) == 1:
        return np.array([1])
    return fcluster(linkage(points, method="single"), t=radius, criterion="distance")


def _consensus_key(c: StalkCandidate):
    # order-independent total order for picking representatives
    return (-score(c.features), c.features.d, *c.insertion_point.tolist(), c.instance_id)


def consensus(frame_bests: Sequence[Optional[StalkCandidate]], cfg: SelectionConfig,
              had_detections: Optional[bool] = None
              ) -> Union[InsertionTarget, RepositionSignal]:
    """Fuse per-frame best candidates into one target.

    ``had_detections`` tells whether any frame produced candidates before
    filtering; it distinguishes NoDetections from AllFiltered when every frame
    came back empty. When omitted, empty frames count as NoDetections.
    """
    cands = [c for c in frame_bests if c is not None]
    if not cands:
        reason = RepositionReason.ALL_FILTERED if had_detections else RepositionReason.NO_DETECTIONS
        return RepositionSignal(reason)
    pts = np.array([c.insertion_point for c in cands])
    labels = single_linkage(pts, cfg.cluster_radius)
    clusters = {}
    for lab, c in zip(labels, cands):
        clusters.setdefault(lab, []).append(c)
    best_cluster = min(clusters.values(),
                       key=lambda members: (-len(members), min(_consensus_key(m) for m in members)))
    if len(best_cluster) < 2 and cfg.n_frames >= 3:
        return RepositionSignal(RepositionReason.NO_CLUSTER)
    rep = min(best_cluster, key=_consensus_key)
    return InsertionTarget(
        point=rep.insertion_point.copy(),
        approach_direction=approach_direction(rep.camera_origin, rep.insertion_point),
        source_cluster_size=len(best_cluster),
        candidate=rep,
    )


def select_in_frame(cands: Sequence[StalkCandidate], cfg: SelectionConfig) -> Optional[StalkCandidate]:
    """Workspace filter, then spacing filter, then the score argmax."""
    kept = filter_workspace(cands, cfg.workspace)
    kept = filter_spacing(kept, cfg.gripper_clearance)
    return select_frame_best(kept)
