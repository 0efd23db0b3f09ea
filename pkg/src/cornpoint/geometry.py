"""Shared 3D/2D geometry: lines, rigid poses, pinhole camera, elliptical sections.

Conventions
-----------
Robot frame: z up, ground nominally at z = 0.
Camera frame: z forward, x right, y down.
Points are plain ``numpy`` float64 arrays of shape (3,).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Tuple

import numpy as np


class GeometryError(ValueError):
    """Base class for geometry precondition failures."""


class BehindCamera(GeometryError):
    pass


class InvalidDepth(GeometryError):
    pass


class HorizontalLine(GeometryError):
    pass


class OffsetOutOfRange(GeometryError):
    pass


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"non-finite point {arr}")
    return arr


@dataclass(frozen=True, eq=False)
class Line3:
    """Infinite 3D line stored with a unit, upward-pointing direction."""

    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        p = as_point(self.point)
        d = as_point(self.direction)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise GeometryError("zero line direction")
        d = d / n
        if d[2] < 0 or (d[2] == 0 and (d[0], d[1]) < (0.0, 0.0)):
            d = -d
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", d)

    def distance(self, pts) -> np.ndarray:
        """Orthogonal distance from one point or an (N, 3) array of points."""
        q = np.asarray(pts, dtype=np.float64) - self.point
        along = q @ self.direction
        perp = q - np.multiply.outer(along, self.direction)
        return np.linalg.norm(perp, axis=-1)

    def at(self, t: float) -> np.ndarray:
        return self.point + t * self.direction

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "direction": self.direction.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Line3":
        return cls(np.array(d["point"]), np.array(d["direction"]))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized camera-frame ray (x/z, y/z, 1) for every pixel, shape (H, W, 3)."""
        u = (np.arange(self.width, dtype=np.float64) - self.cx) / self.fx
        v = (np.arange(self.height, dtype=np.float64) - self.cy) / self.fy
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = u[None, :]
        rays[..., 1] = v[:, None]
        rays[..., 2] = 1.0
        return rays

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform mapping points from a child frame into a parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = as_point(self.translation)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def rotate(self, vecs) -> np.ndarray:
        return np.asarray(vecs, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "Pose3":
        Rt = self.rotation.T
        return Pose3(Rt, -Rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose3":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose3:
    """Camera-in-robot pose for a camera at ``eye`` looking at ``target``.

    The camera y axis points down in the image, i.e. roughly against ``up``.
    """
    eye = as_point(eye)
    z = as_point(target) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, as_point(up))
    if np.linalg.norm(x) < 1e-9:
        raise GeometryError("view direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose3(np.column_stack([x, y, z]), eye)


def project(intrinsics: CameraIntrinsics, p_cam) -> Tuple[float, float]:
    """Pinhole projection of a camera-frame point to pixel (u, v)."""
    x, y, z = as_point(p_cam)
    if z <= 0:
        raise BehindCamera(f"point at z={z} is not in front of the camera")
    return intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy


def backproject(intrinsics: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Lift pixel (u, v) with z-depth ``depth`` to a camera-frame point."""
    if not math.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    u, v = pixel
    return np.array([
        (u - intrinsics.cx) * depth / intrinsics.fx,
        (v - intrinsics.cy) * depth / intrinsics.fy,
        depth,
    ])


def line_point_at_height(line: Line3, z_target: float) -> np.ndarray:
    dz = line.direction[2]
    if abs(dz) <= 1e-6:
        raise HorizontalLine("line is (nearly) horizontal")
    t = (z_target - line.point[2]) / dz
    p = line.point + t * line.direction
    p[2] = z_target
    return p


@dataclass(frozen=True)
class EllipseSection:
    """Stalk cross-section. ``orientation`` rotates local x about the stalk axis,
    measured from the robot x axis in the horizontal plane."""

    a: float
    b: float
    orientation: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise GeometryError("semi-axes must be positive")

    @property
    def major(self) -> float:
        return max(self.a, self.b)

    @property
    def minor(self) -> float:
        return min(self.a, self.b)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "orientation": self.orientation}

    @classmethod
    def from_dict(cls, d: dict) -> "EllipseSection":
        return cls(float(d["a"]), float(d["b"]), float(d.get("orientation", 0.0)))


def _approach_frame_form(section: EllipseSection, approach_angle: float) -> np.ndarray:
    """Quadratic form of the ellipse expressed in a frame whose +X is the approach direction."""
    rel = section.orientation - approach_angle
    c, s = math.cos(rel), math.sin(rel)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([1.0 / section.a**2, 1.0 / section.b**2]) @ R.T


def lateral_half_extent(section: EllipseSection, approach_angle: float) -> float:
    """Half-width of the section seen along the approach direction."""
    rel = section.orientation - approach_angle
    return math.sqrt((section.a * math.sin(rel)) ** 2 + (section.b * math.cos(rel)) ** 2)


def _entry_exit(Q: np.ndarray, offset: float) -> Tuple[float, float]:
    # Solve Q_xx t^2 + 2 Q_xy d t + Q_yy d^2 - 1 = 0 for the line (t, d).
    A, B, C = Q[0, 0], 2 * Q[0, 1] * offset, Q[1, 1] * offset**2 - 1.0
    disc = B * B - 4 * A * C
    if disc <= 0:
        raise OffsetOutOfRange("insertion line misses the section")
    r = math.sqrt(disc)
    return (-B - r) / (2 * A), (-B + r) / (2 * A)


def glance_angle(section: EllipseSection, offset: float, approach_angle: float) -> float:
    """Angle between an approach direction and the inward surface normal at entry.

    ``approach_angle`` is the horizontal heading of the insertion, ``offset`` the
    signed lateral distance of the insertion line from the section center.
    """
    if abs(offset) >= lateral_half_extent(section, approach_angle):
        raise OffsetOutOfRange(f"|offset|={abs(offset)} outside section")
    Q = _approach_frame_form(section, approach_angle)
    t_in, _ = _entry_exit(Q, offset)
    n = Q @ np.array([t_in, offset])
    return math.atan2(abs(n[1]), abs(n[0]))


def chord_length(section: EllipseSection, offset: float, approach_angle: float) -> float:
    """Length of material along the insertion line; 0 if the line misses."""
    if abs(offset) >= lateral_half_extent(section, approach_angle):
        return 0.0
    t_in, t_out = _entry_exit(_approach_frame_form(section, approach_angle), offset)
    return t_out - t_in


def section_depth(section: EllipseSection, approach_angle: float) -> float:
    """Full extent of the section along the approach direction (through its center)."""
    return chord_length(section, 0.0, approach_angle)


def entry_glance_angle(section: EllipseSection, offset: float,
                       insert_axis: Literal["major", "minor"]) -> float:
    """Glance angle when inserting along the section's major or minor axis.

    The section is treated as ``x^2/p^2 + y^2/q^2 = 1`` with the insertion along
    x: ``p`` is the semi-axis named by ``insert_axis``, ``q`` the other one, and
    ``tan(theta) = (|offset|/q^2) / (x0/p^2)`` with ``x0 = p*sqrt(1 - offset^2/q^2)``.
    """
    if insert_axis == "major":
        p, q = section.major, section.minor
    elif insert_axis == "minor":
        p, q = section.minor, section.major
    else:
        raise ValueError(f"insert_axis must be 'major' or 'minor', got {insert_axis!r}")
    if abs(offset) >= q:
        raise OffsetOutOfRange(f"|offset|={abs(offset)} >= perpendicular semi-axis {q}")
    x0 = p * math.sqrt(1.0 - (offset / q) ** 2)
    return math.atan2(abs(offset) / q**2, x0 / p**2)


def horizontal_heading(vec) -> float:
    v = np.asarray(vec, dtype=np.float64)
    return math.atan2(v[1], v[0])
