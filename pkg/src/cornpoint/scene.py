"""Procedural cornfield scenes and a synthetic RGB-D/segmentation camera.

A scene holds ground-truth stalks (tilted elliptical cylinders), optional leaf
quads and a smooth terrain height field. ``render_frame`` rasterizes it by
per-pixel ray casting and then corrupts the result the way a stereo camera and
an instance segmenter would: depth noise growing with z^2, dropout, ragged mask
boundaries, leaf occluders, missed instances and confidence scores.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, special

from .geometry import (
    CameraIntrinsics,
    EllipseSection,
    Line3,
    Pose3,
    line_point_at_height,
    look_at_pose,
)


class ConfigError(ValueError):
    pass


class EmptyFrustum(RuntimeError):
    pass


class UnknownStalk(KeyError):
    pass


def _check_range(name, rng, lo=-math.inf, hi=math.inf):
    a, b = rng
    if not (a <= b):
        raise ConfigError(f"{name}: inverted range {rng}")
    if a < lo or b > hi:
        raise ConfigError(f"{name}: {rng} outside [{lo}, {hi}]")


@dataclass
class SceneConfig:
    """Sampling ranges for scene generation (meters unless noted)."""

    n_stalks: Optional[int] = None  # fixed count in the near row; None fills rows by spacing
    n_rows: int = 2
    row_spacing: float = 0.75
    row_x_range: Tuple[float, float] = (0.28, 0.70)
    row_y_extent: Tuple[float, float] = (-0.60, 0.60)
    spacing_range: Tuple[float, float] = (0.05, 0.40)
    lateral_jitter: float = 0.015
    diameter_range: Tuple[float, float] = (0.012, 0.040)
    circular_fraction: float = 0.4
    aspect_range: Tuple[float, float] = (1.1, 1.5)
    max_tilt_deg: float = 10.0
    height_range: Tuple[float, float] = (0.40, 0.90)
    pith_range: Tuple[float, float] = (0.02, 0.10)
    stiffness_range: Tuple[float, float] = (0.0, 1.0)
    terrain_amplitude: float = 0.08
    leaves_per_stalk: int = 0

    def validate(self) -> "SceneConfig":
        _check_range("row_x_range", self.row_x_range)
        _check_range("row_y_extent", self.row_y_extent)
        _check_range("spacing_range", self.spacing_range, 0.0)
        _check_range("diameter_range", self.diameter_range, 0.0)
        _check_range("aspect_range", self.aspect_range, 1.0)
        _check_range("height_range", self.height_range, 0.0)
        _check_range("pith_range", self.pith_range, 0.0)
        _check_range("stiffness_range", self.stiffness_range, 0.0, 1.0)
        if self.spacing_range[0] <= 0:
            raise ConfigError("spacing_range must be positive")
        if self.diameter_range[0] <= 0:
            raise ConfigError("diameter_range must be positive")
        if not 0 <= self.circular_fraction <= 1:
            raise ConfigError("circular_fraction must lie in [0, 1]")
        if not 0 <= self.max_tilt_deg <= 20:
            raise ConfigError("max_tilt_deg must lie in [0, 20]")
        if not 0 <= self.terrain_amplitude <= 0.08:
            raise ConfigError("terrain_amplitude must lie in [0, 0.08]")
        if self.n_rows < 1 or self.row_spacing <= 0:
            raise ConfigError("need at least one row and positive row spacing")
        if self.n_stalks is not None and self.n_stalks < 1:
            raise ConfigError("n_stalks must be >= 1")
        if self.leaves_per_stalk < 0:
            raise ConfigError("leaves_per_stalk must be >= 0")
        return self


@dataclass
class NoiseConfig:
    """Sensor and segmentation corruption applied at render time.

    ``depth_corr_px`` sets the Gaussian correlation length of the depth noise
    field; the marginal per-pixel sigma is ``depth_sigma0 * z**2`` regardless.
    ``boundary_corr_rows`` does the same for mask edge jitter along image rows;
    each edge offset stays uniform on [-j, j].
    """

    depth_sigma0: float = 0.0125
    depth_corr_px: float = 80.0
    depth_dropout: float = 0.02
    mask_boundary_jitter: int = 2
    boundary_corr_rows: float = 20.0
    occlusion_fraction: float = 0.2
    confidence_range: Tuple[float, float] = (0.80, 1.00)
    false_negative_rate: float = 0.05

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(depth_sigma0=0.0, depth_corr_px=0.0, depth_dropout=0.0,
                   mask_boundary_jitter=0, occlusion_fraction=0.0,
                   confidence_range=(1.0, 1.0), false_negative_rate=0.0)

    def validate(self) -> "NoiseConfig":
        if min(self.depth_sigma0, self.depth_corr_px, self.mask_boundary_jitter,
               self.boundary_corr_rows) < 0:
            raise ConfigError("noise magnitudes must be non-negative")
        for name in ("depth_dropout", "occlusion_fraction", "false_negative_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        _check_range("confidence_range", self.confidence_range, 0.0, 1.0)
        return self


@dataclass
class Terrain:
    """Height field as a sum of low-frequency plane waves: sum A*sin(kx*x + ky*y + phase)."""

    components: List[Tuple[float, float, float, float]] = field(default_factory=list)

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        h = np.zeros(np.broadcast(x, y).shape)
        for amp, kx, ky, ph in self.components:
            h = h + amp * np.sin(kx * x + ky * y + ph)
        return h if h.ndim else float(h)

    @property
    def bound(self) -> float:
        return float(sum(abs(c[0]) for c in self.components))


@dataclass
class StalkTruth:
    axis: Line3
    section: EllipseSection
    base_z: float
    top_z: float
    stiffness: float
    pith_top_z: float

    def point_at(self, z: float) -> np.ndarray:
        return line_point_at_height(self.axis, z)

    def frame(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (e1, e2, d): e1 along semi-axis ``a``, d the axis direction."""
        d = self.axis.direction
        ref = np.array([1.0, 0.0, 0.0]) - d[0] * d
        ref /= np.linalg.norm(ref)
        ref2 = np.cross(d, ref)
        c, s = math.cos(self.section.orientation), math.sin(self.section.orientation)
        e1 = c * ref + s * ref2
        return e1, np.cross(d, e1), d

    def to_dict(self) -> dict:
        return {
            "axis": self.axis.to_dict(),
            "section": self.section.to_dict(),
            "base_z": self.base_z,
            "top_z": self.top_z,
            "stiffness": self.stiffness,
            "pith_top_z": self.pith_top_z,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StalkTruth":
        return cls(Line3.from_dict(d["axis"]), EllipseSection.from_dict(d["section"]),
                   float(d["base_z"]), float(d["top_z"]), float(d["stiffness"]),
                   float(d["pith_top_z"]))


@dataclass
class Leaf:
    """Planar quad: ``center`` +/- ``half_u`` +/- ``half_v``."""

    center: np.ndarray
    half_u: np.ndarray
    half_v: np.ndarray

    def to_dict(self) -> dict:
        return {"center": list(map(float, self.center)), "half_u": list(map(float, self.half_u)),
                "half_v": list(map(float, self.half_v))}

    @classmethod
    def from_dict(cls, d: dict) -> "Leaf":
        return cls(np.array(d["center"], float), np.array(d["half_u"], float),
                   np.array(d["half_v"], float))


@dataclass
class SceneTruth:
    stalks: List[StalkTruth]
    leaves: List[Leaf]
    terrain: Terrain
    row_spacing: float
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rng_seed": self.rng_seed,
            "row_spacing": self.row_spacing,
            "terrain": [list(map(float, c)) for c in self.terrain.components],
            "stalks": [s.to_dict() for s in self.stalks],
            "leaves": [lf.to_dict() for lf in self.leaves],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneTruth":
        return cls(
            stalks=[StalkTruth.from_dict(s) for s in d["stalks"]],
            leaves=[Leaf.from_dict(lf) for lf in d.get("leaves", [])],
            terrain=Terrain([tuple(map(float, c)) for c in d.get("terrain", [])]),
            row_spacing=float(d["row_spacing"]),
            rng_seed=int(d["rng_seed"]),
        )


@dataclass
class FrameObservation:
    masks: np.ndarray  # uint8 instance labels, 0 = background
    depth: np.ndarray  # float64 z-depth in meters, 0 = invalid
    intrinsics: CameraIntrinsics
    cam_pose: Pose3  # camera in robot frame
    confidences: List[float]  # confidences[k - 1] belongs to label k
    instance_stalk_ids: Optional[List[int]] = None  # synthetic frames only

    @property
    def n_instances(self) -> int:
        return len(self.confidences)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=319.5, cy=239.5, width=640, height=480)


def default_camera_pose(height: float = 0.20, pitch_deg: float = 20.0,
                        forward: float = 0.05) -> Pose3:
    """In-hand camera at the scan pose, looking along +x and pitched down."""
    eye = np.array([forward, 0.0, height])
    target = eye + np.array([1.0, 0.0, -math.tan(math.radians(pitch_deg))])
    return look_at_pose(eye, target)


def _sample_section(cfg: SceneConfig, rng: np.random.Generator) -> EllipseSection:
    lo, hi = cfg.diameter_range
    d_major = rng.uniform(lo, hi)
    if rng.random() < cfg.circular_fraction:
        aspect = 1.0
    else:
        aspect = rng.uniform(*cfg.aspect_range)
    d_minor = max(lo, d_major / aspect)
    orientation = rng.uniform(0.0, math.pi)
    return EllipseSection(d_major / 2.0, d_minor / 2.0, orientation)


def _sample_terrain(cfg: SceneConfig, rng: np.random.Generator) -> Terrain:
    if cfg.terrain_amplitude == 0:
        return Terrain([])
    weights = rng.uniform(0.2, 1.0, size=3)
    amps = cfg.terrain_amplitude * weights / weights.sum() * rng.uniform(0.5, 1.0)
    comps = []
    for amp in amps:
        wavelength = rng.uniform(1.0, 4.0)
        heading = rng.uniform(0.0, 2 * math.pi)
        k = 2 * math.pi / wavelength
        comps.append((float(amp), k * math.cos(heading), k * math.sin(heading),
                      float(rng.uniform(0.0, 2 * math.pi))))
    return Terrain(comps)


def _row_positions(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    y0, y1 = cfg.row_y_extent
    ys = [rng.uniform(y0, y0 + cfg.spacing_range[1])]
    while True:
        y = ys[-1] + rng.uniform(*cfg.spacing_range)
        if y > y1:
            break
        ys.append(y)
    return np.array(ys)


def _sample_stalk(x, y, cfg: SceneConfig, terrain: Terrain, rng) -> StalkTruth:
    section = _sample_section(cfg, rng)
    tilt = math.radians(rng.uniform(0.0, cfg.max_tilt_deg))
    azim = rng.uniform(0.0, 2 * math.pi)
    direction = np.array([math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim),
                          math.cos(tilt)])
    base_z = float(terrain.height(x, y))
    axis = Line3(np.array([x, y, base_z]), direction)
    return StalkTruth(
        axis=axis,
        section=section,
        base_z=base_z,
        top_z=base_z + rng.uniform(*cfg.height_range),
        stiffness=float(rng.uniform(*cfg.stiffness_range)),
        pith_top_z=base_z + rng.uniform(*cfg.pith_range),
    )


def _sample_leaves(stalk: StalkTruth, n: int, rng) -> List[Leaf]:
    leaves = []
    for _ in range(n):
        z = rng.uniform(stalk.base_z + 0.03, min(stalk.top_z, stalk.base_z + 0.35))
        root = stalk.point_at(z)
        heading = rng.uniform(0.0, 2 * math.pi)
        droop = math.radians(rng.uniform(-30.0, 10.0))
        u = np.array([math.cos(heading) * math.cos(droop), math.sin(heading) * math.cos(droop),
                      math.sin(droop)])
        length = rng.uniform(0.10, 0.30)
        width = rng.uniform(0.03, 0.06)
        v = np.cross(u, [0.0, 0.0, 1.0])
        v /= np.linalg.norm(v)
        # tilt the blade about its long axis so it is not always edge-on
        roll = rng.uniform(-0.6, 0.6)
        v = math.cos(roll) * v + math.sin(roll) * np.cross(u, v)
        leaves.append(Leaf(root + u * length / 2, u * length / 2, v * width / 2))
    return leaves


def generate_scene(config: SceneConfig, seed: int) -> SceneTruth:
    """Sample a cornfield scene; identical seeds give identical scenes."""
    config.validate()
    rng = np.random.default_rng(seed)
    terrain = _sample_terrain(config, rng)
    row_x = rng.uniform(*config.row_x_range)
    stalks: List[StalkTruth] = []
    for r in range(config.n_rows):
        x_row = row_x + r * config.row_spacing
        if config.n_stalks is not None and r == 0:
            if config.n_stalks == 1:
                ys = np.array([rng.uniform(-0.05, 0.05)])
            else:
                gaps = rng.uniform(*config.spacing_range, size=config.n_stalks - 1)
                ys = np.concatenate([[0.0], np.cumsum(gaps)])
                ys -= ys.mean()
        elif config.n_stalks is not None:
            continue
        else:
            ys = _row_positions(config, rng)
        for y in ys:
            x = x_row + rng.uniform(-config.lateral_jitter, config.lateral_jitter)
            stalks.append(_sample_stalk(x, float(y), config, terrain, rng))
    leaves = [lf for s in stalks for lf in _sample_leaves(s, config.leaves_per_stalk, rng)]
    return SceneTruth(stalks=stalks, leaves=leaves, terrain=terrain,
                      row_spacing=config.row_spacing, rng_seed=int(seed))


def truth_insertion_point(scene: SceneTruth, stalk_id: int, z_target: float,
                          strict: bool = True) -> Tuple[np.ndarray, EllipseSection]:
    """Exact axis point of a stalk at ``z_target`` and its cross-section."""
    if not 0 <= stalk_id < len(scene.stalks):
        raise UnknownStalk(stalk_id)
    stalk = scene.stalks[stalk_id]
    if strict and not stalk.base_z <= z_target <= stalk.top_z:
        raise ValueError(f"z_target={z_target} outside stalk {stalk_id} extent "
                         f"[{stalk.base_z:.3f}, {stalk.top_z:.3f}]")
    return stalk.point_at(z_target), stalk.section


# ---------------------------------------------------------------------------
# rendering


@dataclass
class RenderedGeometry:
    """Noise-free render: stalk index + 1 per pixel (0 = other) and z-depth."""

    labels: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    cam_pose: Pose3


def _terrain_depth(terrain: Terrain, origin, dirs, iters: int = 3) -> np.ndarray:
    dz = dirs[..., 2]
    t = np.zeros(dz.shape)
    down = dz < -1e-9
    h = np.zeros(dz.shape)
    for _ in range(iters):
        t = np.where(down, (h - origin[2]) / np.where(down, dz, -1.0), 0.0)
        if not terrain.components:
            break
        h = terrain.height(origin[0] + t * dirs[..., 0], origin[1] + t * dirs[..., 1])
    return np.where(down & (t > 0), t, 0.0)


def _stalk_bbox(stalk: StalkTruth, world_to_cam: Pose3, intr: CameraIntrinsics):
    """Conservative pixel bbox (r0, r1, c0, c1) of a stalk, or None if off-screen."""
    zs = np.linspace(stalk.base_z, stalk.top_z, 24)
    pts = np.array([stalk.point_at(z) for z in zs])
    cam = world_to_cam.apply(pts)
    front = cam[:, 2] > 0.02
    if not front.any():
        return None
    cam = cam[front]
    r = stalk.section.major
    u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    pad_u = intr.fx * r / cam[:, 2] + 3
    pad_v = intr.fy * r / cam[:, 2] + 3
    c0 = int(math.floor(np.min(u - pad_u)))
    c1 = int(math.ceil(np.max(u + pad_u)))
    r0 = int(math.floor(np.min(v - pad_v)))
    r1 = int(math.ceil(np.max(v + pad_v)))
    if not front.all():
        # part of the stalk is behind the camera: let it reach the image border
        r0, r1, c0, c1 = min(r0, 0), max(r1, intr.height), min(c0, 0), max(c1, intr.width)
    c0, c1 = max(c0, 0), min(c1, intr.width - 1)
    r0, r1 = max(r0, 0), min(r1, intr.height - 1)
    if c0 > c1 or r0 > r1:
        return None
    return r0, r1, c0, c1


def _ray_stalk(stalk: StalkTruth, origin, dirs) -> np.ndarray:
    """Ray parameter (= camera z-depth) of the first hit on the stalk surface, inf if none."""
    e1, e2, d = stalk.frame()
    rel = origin - stalk.axis.point
    a, b = stalk.section.a, stalk.section.b
    p1, p2 = rel @ e1, rel @ e2
    q1, q2 = dirs @ e1, dirs @ e2
    A = (q1 / a) ** 2 + (q2 / b) ** 2
    B = 2 * (p1 * q1 / a**2 + p2 * q2 / b**2)
    C = (p1 / a) ** 2 + (p2 / b) ** 2 - 1.0
    disc = B * B - 4 * A * C
    ok = (disc >= 0) & (A > 1e-18)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = np.where(ok, (-B - sq) / (2 * np.where(ok, A, 1.0)), np.inf)
    s_top = (stalk.top_z - stalk.base_z) / d[2]
    s = (rel @ d) + t * (dirs @ d)
    valid = ok & (t > 0) & (s >= 0) & (s <= s_top)
    return np.where(valid, t, np.inf)


def _ray_leaf(leaf: Leaf, origin, dirs) -> np.ndarray:
    n = np.cross(leaf.half_u, leaf.half_v)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((leaf.center - origin) @ n) / denom
    hit = origin + t[..., None] * dirs
    rel = hit - leaf.center
    su = (rel @ leaf.half_u) / (leaf.half_u @ leaf.half_u)
    sv = (rel @ leaf.half_v) / (leaf.half_v @ leaf.half_v)
    valid = (np.abs(denom) > 1e-12) & (t > 0) & (np.abs(su) <= 1) & (np.abs(sv) <= 1)
    return np.where(valid, t, np.inf)


def render_geometry(scene: SceneTruth, cam_pose: Pose3,
                    intrinsics: CameraIntrinsics) -> RenderedGeometry:
    """Noise-free ray cast of stalks, leaves and terrain."""
    rays_cam = intrinsics.pixel_rays()
    dirs = cam_pose.rotate(rays_cam)  # robot frame, parameter t is camera z-depth
    origin = cam_pose.translation
    # ground only serves as background depth: cast it at half resolution
    ground = _terrain_depth(scene.terrain, origin, dirs[::2, ::2])
    ground = np.repeat(np.repeat(ground, 2, axis=0), 2, axis=1)[:intrinsics.height, :intrinsics.width]
    zbuf = np.where(ground > 0, ground, np.inf)
    labels = np.zeros((intrinsics.height, intrinsics.width), dtype=np.int32)
    world_to_cam = cam_pose.inverse()

    for idx, stalk in enumerate(scene.stalks):
        box = _stalk_bbox(stalk, world_to_cam, intrinsics)
        if box is None:
            continue
        r0, r1, c0, c1 = box
        sub = (slice(r0, r1 + 1), slice(c0, c1 + 1))
        t = _ray_stalk(stalk, origin, dirs[sub])
        closer = t < zbuf[sub]
        zbuf[sub] = np.where(closer, t, zbuf[sub])
        labels[sub] = np.where(closer, idx + 1, labels[sub])

    for leaf in scene.leaves:
        t = _ray_leaf(leaf, origin, dirs)
        closer = t < zbuf
        zbuf = np.where(closer, t, zbuf)
        labels = np.where(closer, 0, labels)

    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return RenderedGeometry(labels, depth, intrinsics, cam_pose)


def _split(total: int, parts: int, rng, allow_zero: bool) -> np.ndarray:
    """Random composition of ``total`` into ``parts`` integers."""
    if parts == 1:
        return np.array([total])
    if allow_zero:
        return rng.multinomial(total, np.full(parts, 1.0 / parts))
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def _occlude(labels, depth, label, fraction, rng):
    """Lay horizontal leaf strips across ``fraction`` of one instance's rows."""
    rows = np.nonzero((labels == label).any(axis=1))[0]
    if rows.size == 0:
        return
    r_lo, r_hi = rows[0], rows[-1]
    n_rows = r_hi - r_lo + 1
    k = int(math.ceil(fraction * n_rows))
    if k <= 0:
        return
    k = min(k, n_rows)
    n_strips = int(min(rng.integers(1, 4), k))
    lengths = _split(k, n_strips, rng, allow_zero=False)
    gaps = _split(n_rows - k, n_strips + 1, rng, allow_zero=True)
    cols = np.nonzero((labels[r_lo:r_hi + 1] == label).any(axis=0))[0]
    margin = int(rng.integers(3, 12))
    c0 = max(cols[0] - margin, 0)
    c1 = min(cols[-1] + margin, labels.shape[1] - 1)
    start = r_lo
    for g, ln in zip(gaps[:-1], lengths):
        start += g
        band = (slice(start, start + ln), slice(c0, c1 + 1))
        inst = labels[band] == label
        if inst.any():
            leaf_z = depth[band][inst].min() - rng.uniform(0.02, 0.08)
            leaf_z = max(leaf_z, 0.05)
            behind = (depth[band] > leaf_z) | (depth[band] == 0)
            labels[band] = np.where(behind, 0, labels[band])
            depth[band] = np.where(behind, leaf_z, depth[band])
        start += ln


def _edge_offsets(n, j, corr, rng) -> np.ndarray:
    """(n, 2) integer offsets, uniform on [-j, j], correlated over ``corr`` rows."""
    if corr <= 0:
        return rng.integers(-j, j + 1, size=(n, 2))
    pad = int(4 * corr) + 1
    white = rng.standard_normal((n + 2 * pad, 2))
    g = ndimage.gaussian_filter1d(white, corr, axis=0, mode="constant")[pad:pad + n]
    impulse = np.zeros(2 * pad + 1)
    impulse[pad] = 1.0
    g /= math.sqrt(np.sum(ndimage.gaussian_filter1d(impulse, corr, mode="constant") ** 2))
    k = np.floor(special.ndtr(g) * (2 * j + 1)).astype(np.int64)
    return np.minimum(k, 2 * j) - j


def _jitter_boundaries(labels, label, j, rng, corr=0.0):
    rows = np.nonzero((labels == label).any(axis=1))[0]
    W = labels.shape[1]
    offsets = _edge_offsets(rows.size, j, corr, rng)
    for r, (o1, o2) in zip(rows, offsets):
        row = labels[r]
        cols = np.nonzero(row == label)[0]
        c1, c2 = cols[0], cols[-1]
        n1, n2 = c1 + int(o1), c2 + int(o2)
        n1, n2 = max(n1, 0), min(n2, W - 1)
        if n2 < n1:
            n1 = n2 = (c1 + c2) // 2
        # shrink
        row[c1:n1][row[c1:n1] == label] = 0
        row[n2 + 1:c2 + 1][row[n2 + 1:c2 + 1] == label] = 0
        # grow into background only
        seg = row[n1:c1]
        seg[seg == 0] = label
        seg = row[c2 + 1:n2 + 1]
        seg[seg == 0] = label


def _noise_unit_field(shape, corr_px: float, rng) -> np.ndarray:
    """Unit-variance Gaussian field with a Gaussian autocorrelation of ``corr_px``."""
    white = rng.standard_normal(shape)
    if corr_px <= 0:
        return white
    # periodic Gaussian blur in the frequency domain
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    h = np.exp(-2.0 * (math.pi * corr_px) ** 2 * (fx**2 + fy**2))
    smooth = np.fft.irfft2(np.fft.rfft2(white) * h, s=shape)
    # variance of the blurred field is mean(|H|^2) over the full spectrum
    full = np.exp(-2.0 * (math.pi * corr_px) ** 2 * (np.fft.fftfreq(shape[1])[None, :] ** 2 + fy**2))
    return smooth / math.sqrt(np.mean(full**2))


def apply_noise(geom: RenderedGeometry, noise: NoiseConfig, seed) -> FrameObservation:
    """Corrupt a noise-free render into what the perception stack would see."""
    noise.validate()
    rng = np.random.default_rng(seed)
    labels = geom.labels.copy()
    depth = geom.depth.copy()
    present = [int(v) for v in np.unique(labels) if v > 0]

    if noise.occlusion_fraction > 0:
        for lab in present:
            _occlude(labels, depth, lab, noise.occlusion_fraction, rng)

    kept = []
    for lab in present:
        if noise.false_negative_rate > 0 and rng.random() < noise.false_negative_rate:
            labels[labels == lab] = 0
        elif (labels == lab).any():
            kept.append(lab)

    if noise.mask_boundary_jitter > 0:
        for lab in kept:
            _jitter_boundaries(labels, lab, noise.mask_boundary_jitter, rng,
                               noise.boundary_corr_rows)

    valid = depth > 0
    if noise.depth_sigma0 > 0:
        n = _noise_unit_field(depth.shape, noise.depth_corr_px, rng)
        depth = np.where(valid, depth + noise.depth_sigma0 * depth**2 * n, 0.0)
        depth = np.where(depth > 0, depth, 0.0)
    if noise.depth_dropout > 0:
        drop = rng.random(depth.shape) < noise.depth_dropout
        depth = np.where(drop, 0.0, depth)

    masks = np.zeros(labels.shape, dtype=np.uint8)
    for new, lab in enumerate(kept, start=1):
        masks[labels == lab] = new
    lo, hi = noise.confidence_range
    conf = [float(rng.uniform(lo, hi)) if hi > lo else float(lo) for _ in kept]
    return FrameObservation(masks=masks, depth=depth, intrinsics=geom.intrinsics,
                            cam_pose=geom.cam_pose, confidences=conf,
                            instance_stalk_ids=[lab - 1 for lab in kept])


def render_frame(scene: SceneTruth, cam_pose: Pose3, intrinsics: CameraIntrinsics,
                 noise: NoiseConfig, seed) -> FrameObservation:
    geom = render_geometry(scene, cam_pose, intrinsics)
    if not (geom.labels > 0).any():
        raise EmptyFrustum("no stalk is visible from this camera pose")
    return apply_noise(geom, noise, seed)


def config_from_dict(cls, d: Optional[dict]):
    """Build a config dataclass from a plain mapping, rejecting unknown keys."""
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg) -> dict:
    out = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}
