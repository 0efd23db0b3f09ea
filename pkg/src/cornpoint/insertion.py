"""Kinematic contact model of the funnel gripper and trial grading.

The model is deliberately coarse: the funnel either captures the stalk or not,
the spring-loaded V-block pulls the stalk part of the way onto the sensor line,
and the sensor then either glances off the surface or penetrates by the
smaller of the material chord and what the actuator can still push.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .geometry import (
    EllipseSection,
    chord_length,
    glance_angle,
    horizontal_heading,
    lateral_half_extent,
    section_depth,
)
from .scene import SceneTruth, StalkTruth


@dataclass
class SensorSpec:
    probe_l: float = 0.012
    probe_w: float = 0.003
    probe_t: float = 0.002
    pad_depth: float = 0.006
    retain_depth: float = 0.004

    def validate(self) -> "SensorSpec":
        if not 0 < self.retain_depth <= self.pad_depth <= self.probe_l:
            raise ValueError("need 0 < retain_depth <= pad_depth <= probe_l")
        return self


@dataclass
class GripperSpec:
    funnel_half_opening: float = 0.025
    stroke: float = 0.050
    actuator_force: float = 90.0
    vblock_travel: float = 0.046  # V-block face to funnel wall, fully retracted
    spring_rate: float = 6000.0  # N/m
    sensor_recess: float = 0.004  # spring compression before the tip clears the V-block
    penetration_force: float = 45.0  # extra force a fully rigid stalk resists with
    centering_base: float = 0.05  # rho_0
    centering_stiffness: float = 0.6  # rho_1
    glance_max_deg: float = 35.0
    sensor: SensorSpec = field(default_factory=SensorSpec)
    body: tuple = (0.254, 0.076, 0.076)

    def validate(self) -> "GripperSpec":
        if abs(self.stroke - 0.050) > 1e-12:
            raise ValueError("stroke is fixed at 0.050 m")
        for name in ("funnel_half_opening", "actuator_force", "vblock_travel", "spring_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sensor_recess < 0 or self.penetration_force < 0:
            raise ValueError("sensor_recess and penetration_force must be non-negative")
        if not all(v > 0 for v in self.body):
            raise ValueError("body dimensions must be positive")
        self.sensor.validate()
        return self


class FailureStage(str, Enum):
    DETECT = "Detect"
    GRASP = "Grasp"
    INSERT = "Insert"
    PADS = "Pads"
    PITH = "Pith"


@dataclass
class GraspOutcome:
    captured: bool
    offset: float  # signed lateral distance, funnel centerline to stalk axis
    stalk_id: int
    approach_angle: float


@dataclass
class InsertionOutcome:
    penetration: float
    glanced: bool
    retained: bool
    pads_covered: bool
    through_pith: bool
    glance_angle: Optional[float] = None


@dataclass
class TrialReport:
    detected: bool = False
    grasped: bool = False
    inserted: bool = False
    pads_covered: bool = False
    through_pith: bool = False
    failure_stage: Optional[FailureStage] = FailureStage.DETECT
    final_offset: float = math.nan
    penetration: float = 0.0
    pose_error: float = math.nan
    stalk_id: Optional[int] = None
    reposition_reason: Optional[str] = None

    @property
    def criteria(self):
        return (self.detected, self.grasped, self.inserted, self.pads_covered, self.through_pith)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        return {
            "detected": self.detected,
            "grasped": self.grasped,
            "inserted": self.inserted,
            "pads_covered": self.pads_covered,
            "through_pith": self.through_pith,
            "failure_stage": self.failure_stage.value if self.failure_stage else None,
            "final_offset": num(self.final_offset),
            "penetration": self.penetration,
            "pose_error": num(self.pose_error),
            "stalk_id": self.stalk_id,
            "reposition_reason": self.reposition_reason,
        }


def horizontal_axis_offset(stalk: StalkTruth, point, direction) -> tuple:
    """(lateral, along) horizontal offset of the stalk axis from a line through
    ``point`` heading ``direction``, both evaluated at the point's height."""
    axis_pt = stalk.point_at(float(point[2]))
    rel = axis_pt[:2] - np.asarray(point, dtype=np.float64)[:2]
    u = np.asarray(direction, dtype=np.float64)[:2]
    u = u / np.linalg.norm(u)
    lateral = u[0] * rel[1] - u[1] * rel[0]
    return float(lateral), float(u @ rel)


def nearest_stalk(scene: SceneTruth, point) -> tuple:
    """(stalk index, horizontal distance) of the axis closest to ``point`` at its height."""
    best, best_d = -1, math.inf
    for i, s in enumerate(scene.stalks):
        d = float(np.linalg.norm(s.point_at(float(point[2]))[:2] - np.asarray(point)[:2]))
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def simulate_grasp(target, truth: SceneTruth, approach_error, spec: Optional[GripperSpec] = None,
                   stalk_id: Optional[int] = None) -> GraspOutcome:
    """Funnel capture: the stalk is caught iff |lateral offset| <= funnel half opening.

    The funnel centerline runs through ``target.point + approach_error`` along
    ``target.approach_direction``; the stalk engaged is the one nearest to the
    commanded point unless ``stalk_id`` is given.
    """
    spec = spec or GripperSpec()
    commanded = np.asarray(target.point, dtype=np.float64) + np.asarray(approach_error, dtype=np.float64)
    direction = np.asarray(target.approach_direction, dtype=np.float64)
    if stalk_id is None:
        stalk_id, _ = nearest_stalk(truth, commanded)
    lat, _ = horizontal_axis_offset(truth.stalks[stalk_id], commanded, direction)
    return GraspOutcome(captured=abs(lat) <= spec.funnel_half_opening, offset=lat,
                        stalk_id=stalk_id, approach_angle=horizontal_heading(direction))


def centering_retention(stiffness: float, spec: Optional[GripperSpec] = None) -> float:
    spec = spec or GripperSpec()
    return min(max(spec.centering_base + spec.centering_stiffness * stiffness, 0.0), 0.9)


def simulate_vblock_alignment(e: float, stalk: StalkTruth, spec: Optional[GripperSpec] = None) -> float:
    """Residual offset after the V-block pulls the stalk toward the sensor line."""
    return e * centering_retention(stalk.stiffness, spec)


def available_push(section: EllipseSection, approach_angle: float, stiffness: float,
                   spec: GripperSpec) -> float:
    """How far the sensor tip can protrude beyond the V-block face at full stroke."""
    gap = max(0.0, spec.vblock_travel - section_depth(section, approach_angle))
    stroke_left = max(0.0, spec.stroke - gap)
    force_left = max(0.0, spec.actuator_force - stiffness * spec.penetration_force)
    compression = min(stroke_left, force_left / spec.spring_rate)
    return min(max(0.0, compression - spec.sensor_recess), spec.sensor.probe_l)


def simulate_insertion(delta: float, stalk: StalkTruth, spec: Optional[GripperSpec] = None,
                       approach_angle: float = 0.0, z_target: Optional[float] = None
                       ) -> InsertionOutcome:
    """Drive the sensor into the stalk at residual lateral offset ``delta``.

    ``approach_angle`` is the horizontal heading of the insertion; the section's
    own orientation decides which side of the ellipse is hit.
    """
    spec = spec or GripperSpec()
    sec = stalk.section
    z = stalk.pith_top_z if z_target is None else z_target
    in_pith = stalk.base_z <= z <= stalk.pith_top_z
    limit = math.radians(spec.glance_max_deg)
    if abs(delta) >= lateral_half_extent(sec, approach_angle):
        return InsertionOutcome(0.0, True, False, False, False, math.pi / 2)
    angle = glance_angle(sec, delta, approach_angle)
    if angle > limit:
        return InsertionOutcome(0.0, True, False, False, False, angle)
    pen = min(chord_length(sec, delta, approach_angle),
              available_push(sec, approach_angle, stalk.stiffness, spec))
    retained = pen >= spec.sensor.retain_depth
    pads = retained and pen >= spec.sensor.pad_depth
    return InsertionOutcome(pen, False, retained, pads, retained and in_pith, angle)


def grade_trial(target, truth: SceneTruth, grasp: Optional[GraspOutcome] = None,
                insertion: Optional[InsertionOutcome] = None, match_radius: float = 0.025,
                collided: bool = False, reposition_reason: Optional[str] = None) -> TrialReport:
    """Fill the five-stage funnel; every criterion implies all earlier ones."""
    report = TrialReport(reposition_reason=reposition_reason)
    if target is None:
        return report
    sid, dist = nearest_stalk(truth, target.point)
    report.pose_error = dist
    report.stalk_id = sid
    report.detected = dist <= match_radius
    if not report.detected:
        return report
    report.failure_stage = FailureStage.GRASP
    if grasp is None or collided or not grasp.captured:
        if grasp is not None:
            report.final_offset = grasp.offset
        return report
    report.grasped = True
    report.final_offset = grasp.offset
    report.failure_stage = FailureStage.INSERT
    if insertion is None:
        return report
    report.penetration = insertion.penetration
    report.inserted = insertion.retained and not insertion.glanced
    if not report.inserted:
        return report
    report.failure_stage = FailureStage.PADS
    report.pads_covered = insertion.pads_covered
    if not report.pads_covered:
        return report
    report.failure_stage = FailureStage.PITH
    report.through_pith = insertion.through_pith
    if report.through_pith:
        report.failure_stage = None
    return report
