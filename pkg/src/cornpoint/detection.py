"""Per-frame stalk detection: mask feature points, 3D line fit, insertion point."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    CameraIntrinsics,
    GeometryError,
    Line3,
    Pose3,
    backproject,
    line_point_at_height,
)
from .scene import FrameObservation


class DetectionError(RuntimeError):
    pass


class NoValidDepth(DetectionError):
    pass


class TooFewPoints(DetectionError):
    pass


class DegenerateFit(DetectionError):
    pass


@dataclass
class RansacParams:
    iterations: int = 100
    inlier_threshold: float = 0.005
    min_points: int = 4
    min_inliers: int = 4


@dataclass
class DetectionConfig:
    z_target: float = 0.05
    row_stride: int = 10
    depth_search_px: int = 1
    axis_correction: bool = True
    ransac: RansacParams = field(default_factory=RansacParams)


@dataclass
class FeaturePoint:
    pixel: Tuple[int, float]  # (row, mean column)
    depth: float
    p3d: np.ndarray  # robot frame, on the visible stalk surface
    width: int  # mask pixels spanned by this row
    edge_rays: np.ndarray  # (2, 3) unit robot-frame rays through the row's outer mask edges


@dataclass
class MaskFeatures:
    c: float
    w: float
    h: float
    d: float


@dataclass
class StalkCandidate:
    line: Line3
    features: MaskFeatures
    inlier_count: int
    insertion_point: np.ndarray
    instance_id: int = 0
    camera_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "insertion_point": self.insertion_point.tolist(),
            "line": self.line.to_dict(),
            "inlier_count": self.inlier_count,
            "features": {"c": self.features.c, "w": self.features.w,
                         "h": self.features.h, "d": self.features.d},
        }


def sampled_rows(mask: np.ndarray, stride: int = 10) -> np.ndarray:
    """Rows from the bottom-most mask row upward in steps of ``stride``."""
    rows = np.nonzero(mask.any(axis=1))[0]
    if rows.size == 0:
        return rows
    return np.arange(rows[-1], rows[0] - 1, -stride)


def extract_feature_points(mask: np.ndarray, depth: np.ndarray, intrinsics: CameraIntrinsics,
                           cam_pose: Pose3, stride: int = 10,
                           search_px: int = 1) -> List[FeaturePoint]:
    """Center points of every ``stride``-th mask row, lifted to the robot frame.

    A row is skipped when neither its center pixel nor a same-instance
    neighbour within ``search_px`` columns carries valid depth, and when its
    mask run touches the left or right image border (the silhouette is cut, so
    its center is not the stalk center).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DetectionError("empty instance mask")
    W = mask.shape[1]
    offsets = [0] + [s * k for k in range(1, search_px + 1) for s in (-1, 1)]
    points = []
    for r in sampled_rows(mask, stride):
        cols = np.nonzero(mask[r])[0]
        if cols.size == 0 or cols[0] == 0 or cols[-1] == W - 1:
            continue
        u = float(cols.mean())
        c = int(round(u))
        z = 0.0
        for off in offsets:
            cc = c + off
            if 0 <= cc < W and mask[r, cc] and depth[r, cc] > 0:
                z = float(depth[r, cc])
                break
        if z <= 0:
            continue
        p = cam_pose.apply(backproject(intrinsics, (u, float(r)), z))
        edges = np.array([
            [(cols[0] - 0.5 - intrinsics.cx) / intrinsics.fx, (r - intrinsics.cy) / intrinsics.fy, 1.0],
            [(cols[-1] + 0.5 - intrinsics.cx) / intrinsics.fx, (r - intrinsics.cy) / intrinsics.fy, 1.0],
        ])
        edges = cam_pose.rotate(edges)
        edges /= np.linalg.norm(edges, axis=1, keepdims=True)
        points.append(FeaturePoint((int(r), u), z, p, int(cols[-1] - cols[0] + 1), edges))
    if not points:
        raise NoValidDepth("no sampled row has valid depth")
    return points


def _as_array(points) -> np.ndarray:
    if len(points) and isinstance(points[0], FeaturePoint):
        return np.array([fp.p3d for fp in points])
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def least_squares_line(pts: np.ndarray) -> Line3:
    """Orthogonal-distance line fit: centroid plus principal axis."""
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid)
    return Line3(centroid, vt[0])


def fit_stalk_line(points, params: Optional[RansacParams] = None,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Line3, np.ndarray]:
    """RANSAC over two-point hypotheses followed by least-squares refinement.

    Returns the refined line and a boolean inlier mask. When every pair fits in
    the iteration budget the pairs are enumerated instead of sampled.
    """
    params = params or RansacParams()
    pts = _as_array(points)
    n = len(pts)
    if n < max(params.min_points, 2):
        raise TooFewPoints(f"{n} points, need {params.min_points}")

    if n * (n - 1) // 2 <= params.iterations:
        pairs = np.array(list(itertools.combinations(range(n), 2)))
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        i = rng.integers(0, n, size=params.iterations)
        j = (i + rng.integers(1, n, size=params.iterations)) % n
        pairs = np.column_stack([i, j])

    a, b = pts[pairs[:, 0]], pts[pairs[:, 1]]
    dirs = b - a
    norms = np.linalg.norm(dirs, axis=1)
    good = norms > 1e-9
    if not good.any():
        raise DegenerateFit("all points coincide")
    a, dirs = a[good], dirs[good] / norms[good, None]
    rel = pts[None, :, :] - a[:, None, :]
    along = np.einsum("kni,ki->kn", rel, dirs)
    dist = np.linalg.norm(rel - along[..., None] * dirs[:, None, :], axis=2)
    inl = dist < params.inlier_threshold
    counts = inl.sum(axis=1)
    cost = np.where(inl, dist, 0.0).sum(axis=1)
    best = np.lexsort((cost, -counts))[0]
    inliers = inl[best]

    if inliers.sum() < params.min_inliers:
        raise TooFewPoints(f"only {inliers.sum()} inliers, need {params.min_inliers}")
    sel = pts[inliers]
    if np.max(np.linalg.norm(sel - sel.mean(axis=0), axis=1)) < 1e-3:
        raise DegenerateFit("inliers collapse to a single point")
    return least_squares_line(sel), inliers


def surface_to_axis(points: Sequence[FeaturePoint], direction, origin,
                    min_radius_ratio: float = 0.7) -> Tuple[np.ndarray, np.ndarray]:
    """Map visible-surface feature points onto the stalk axis.

    Each row's two mask edges are tangent to the stalk; projected onto the plane
    perpendicular to ``direction`` they subtend an angle 2*beta with
    sin(beta) = radius / distance. The radius (median over rows) and the
    measured surface depth give the distance to the axis, which is then taken
    along the bisector of the edge rays.

    Returns the axis points and a mask of rows whose own radius estimate is
    consistent with the median; much narrower rows sit on the cut bottom rim of
    the stalk or on a partly hidden silhouette and are not trusted.
    """
    d = np.asarray(direction, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    p = np.array([fp.p3d for fp in points])
    rays = p - o
    rho = np.linalg.norm(rays, axis=1)
    u = rays / rho[:, None]

    def perp(v):
        return v - np.multiply.outer(v @ d, d)

    cos_g = np.linalg.norm(perp(u), axis=1)
    left = np.array([fp.edge_rays[0] for fp in points])
    right = np.array([fp.edge_rays[1] for fp in points])
    lp, rp = perp(left), perp(right)
    lp /= np.linalg.norm(lp, axis=1, keepdims=True)
    rp /= np.linalg.norm(rp, axis=1, keepdims=True)
    beta = 0.5 * np.arccos(np.clip(np.einsum("ij,ij->i", lp, rp), -1.0, 1.0))
    sb = np.sin(beta)
    radii = rho * cos_g * sb / (1.0 - sb)
    radius = float(np.median(radii))
    dist_perp = rho * cos_g + radius
    bis = left + right
    bis /= np.linalg.norm(bis, axis=1, keepdims=True)
    axis_pts = o + (dist_perp / np.linalg.norm(perp(bis), axis=1))[:, None] * bis
    return axis_pts, radii >= min_radius_ratio * radius


def mask_features(mask: np.ndarray, confidence: float, stride: int = 10) -> MaskFeatures:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    widths = []
    for r in sampled_rows(mask, stride):
        c = np.nonzero(mask[r])[0]
        if c.size:
            widths.append(c[-1] - c[0] + 1)
    W = mask.shape[1]
    half = (W - 1) / 2.0
    center = (cols[0] + cols[-1]) / 2.0
    d = min(1.0, abs(center - half) / half)
    return MaskFeatures(c=float(confidence), w=float(max(widths)),
                        h=float(rows[-1] - rows[0] + 1), d=float(d))


def candidate_from_instance(frame: FrameObservation, label: int,
                            config: Optional[DetectionConfig] = None,
                            rng: Optional[np.random.Generator] = None) -> StalkCandidate:
    """Feature points -> line fit -> insertion point at ``z_target`` for one instance."""
    config = config or DetectionConfig()
    mask = frame.masks == label
    fps = extract_feature_points(mask, frame.depth, frame.intrinsics, frame.cam_pose,
                                 config.row_stride, config.depth_search_px)
    line, inliers = fit_stalk_line(fps, config.ransac, rng)
    if config.axis_correction:
        kept = [fp for fp, keep in zip(fps, inliers) if keep]
        axis_pts, trusted = surface_to_axis(kept, line.direction, frame.cam_pose.translation)
        line, refit = fit_stalk_line(axis_pts[trusted], config.ransac, rng)
        inliers = refit
    features = mask_features(mask, frame.confidences[label - 1], config.row_stride)
    return StalkCandidate(
        line=line,
        features=features,
        inlier_count=int(np.sum(inliers)),
        insertion_point=line_point_at_height(line, config.z_target),
        instance_id=int(label),
        camera_origin=frame.cam_pose.translation.copy(),
    )


def detect_frame(frame: FrameObservation, config: Optional[DetectionConfig] = None,
                 rng: Optional[np.random.Generator] = None
                 ) -> Tuple[List[StalkCandidate], Dict[int, str]]:
    """Candidates for every instance in a frame plus the reasons others were dropped."""
    config = config or DetectionConfig()
    cands, rejected = [], {}
    for label in range(1, frame.n_instances + 1):
        if not (frame.masks == label).any():
            rejected[label] = "empty mask"
            continue
        try:
            cands.append(candidate_from_instance(frame, label, config, rng))
        except (DetectionError, GeometryError) as exc:
            rejected[label] = f"{type(exc).__name__}: {exc}"
    return cands, rejected
