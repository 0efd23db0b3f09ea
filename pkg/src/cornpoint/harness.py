"""Run configuration, seeded Monte Carlo trials, and summary statistics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .detection import DetectionConfig, RansacParams, detect_frame
from .fsm import FsmEvent, FsmState, InsertionFsm
from .geometry import CameraIntrinsics
from .insertion import (
    FailureStage,
    GripperSpec,
    SensorSpec,
    TrialReport,
    grade_trial,
    nearest_stalk,
    simulate_grasp,
    simulate_insertion,
    simulate_vblock_alignment,
)
from .scene import (
    ConfigError,
    FrameObservation,
    NoiseConfig,
    SceneConfig,
    SceneTruth,
    apply_noise,
    default_camera_pose,
    default_intrinsics,
    generate_scene,
    render_geometry,
)
from .selection import (
    InsertionTarget,
    RepositionReason,
    RepositionSignal,
    SelectionConfig,
    WorkspaceBox,
    consensus,
    select_in_frame,
)

# Field results over 48 trials: detected 45, grasped 43, inserted 29, pads 16, pith 15.
PAPER_FUNNEL = {"detected": 45 / 48, "grasped": 43 / 48, "inserted": 29 / 48,
                "pads_covered": 16 / 48, "through_pith": 15 / 48}
CRITERIA = ("detected", "grasped", "inserted", "pads_covered", "through_pith")
BUILTIN_CONFIGS = ("default", "calibration", "noiseless")


@dataclass
class CameraConfig:
    height: float = 0.20
    pitch_deg: float = 20.0
    forward: float = 0.05
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)

    def pose(self):
        return default_camera_pose(self.height, self.pitch_deg, self.forward)


@dataclass
class CollisionConfig:
    margin: float = 0.02
    probability: float = 0.5


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    gripper: GripperSpec = field(default_factory=GripperSpec)
    camera: CameraConfig = field(default_factory=CameraConfig)
    collision: CollisionConfig = field(default_factory=CollisionConfig)
    z_target: float = 0.05
    n_trials: int = 48
    n_scenes: int = 1
    approach_error_sigma: float = 0.003
    match_radius: float = 0.025
    seed: int = 0
    output: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.n_trials < 1 or self.n_scenes < 1:
            raise ConfigError("n_trials and n_scenes must be >= 1")
        if self.approach_error_sigma < 0:
            raise ConfigError("approach_error_sigma must be non-negative")
        if not 0 <= self.collision.probability <= 1:
            raise ConfigError("collision.probability must lie in [0, 1]")
        self.scene.validate()
        self.noise.validate()
        try:
            self.selection.validate()
            self.gripper.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.selection.z_target = self.z_target
        self.detection.z_target = self.z_target
        return self


_NESTED = {
    RunConfig: {"scene": SceneConfig, "noise": NoiseConfig, "selection": SelectionConfig,
                "detection": DetectionConfig, "gripper": GripperSpec, "camera": CameraConfig,
                "collision": CollisionConfig},
    SelectionConfig: {"workspace": WorkspaceBox},
    DetectionConfig: {"ransac": RansacParams},
    GripperSpec: {"sensor": SensorSpec},
    CameraConfig: {"intrinsics": CameraIntrinsics},
}


def _build(cls, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None:
            kwargs[key] = _build(sub, value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def config_from_dict(data: Optional[dict]) -> RunConfig:
    return _build(RunConfig, data or {}).validate()


def config_to_dict(obj):
    if is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(v) for v in obj]
    return obj


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a YAML/JSON run config. Bare names of shipped configs are accepted too."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_CONFIGS:
        text = resources.files("cornpoint.configs").joinpath(f"{path}.yaml").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# seeding


def trial_seed(master: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    """Counter-based stream: trial ``index`` is reproducible on its own."""
    return np.random.SeedSequence([int(master), int(stream), int(index)])


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    frames_candidates: List[list]
    frame_bests: list
    outcome: Union[InsertionTarget, RepositionSignal]


def run_detection(frames: Sequence[FrameObservation], cfg: RunConfig,
                  rng: Optional[np.random.Generator] = None) -> PipelineResult:
    """Per-frame candidates, per-frame best, and the multi-frame consensus."""
    rng = rng if rng is not None else np.random.default_rng(0)
    all_cands, bests = [], []
    for frame in frames:
        cands, _ = detect_frame(frame, cfg.detection, rng)
        all_cands.append(cands)
        bests.append(select_in_frame(cands, cfg.selection))
    had = any(all_cands)
    return PipelineResult(all_cands, bests, consensus(bests, cfg.selection, had_detections=had))


def render_trial_frames(scene: SceneTruth, cfg: RunConfig, seeds) -> List[FrameObservation]:
    geom = render_geometry(scene, cfg.camera.pose(), cfg.camera.intrinsics)
    if not (geom.labels > 0).any():
        return []
    return [apply_noise(geom, cfg.noise, s) for s in seeds]


@dataclass
class TrialResult:
    index: int
    scene_seed: int
    report: TrialReport
    target: Optional[List[float]]
    fsm_final: str

    def to_dict(self) -> dict:
        return {"index": self.index, "scene_seed": self.scene_seed, "target": self.target,
                "fsm_final": self.fsm_final, **self.report.to_dict()}


def run_trial(cfg: RunConfig, index: int, master_seed: Optional[int] = None) -> TrialResult:
    """Fresh scene -> frames -> detection -> state machine -> contact model -> grade."""
    master = cfg.seed if master_seed is None else master_seed
    ss_scene, ss_frames, ss_ransac, ss_exec = trial_seed(master, index).spawn(4)
    scene_seed = _int_seed(ss_scene)
    scene = generate_scene(cfg.scene, scene_seed)
    frames = render_trial_frames(scene, cfg, ss_frames.spawn(cfg.selection.n_frames))
    if frames:
        result = run_detection(frames, cfg, np.random.default_rng(ss_ransac))
        outcome = result.outcome
    else:
        outcome = RepositionSignal(RepositionReason.NO_DETECTIONS)
    rng = np.random.default_rng(ss_exec)

    fsm = InsertionFsm()
    fsm.fire(FsmEvent.INSERT_COMMAND)
    fsm.fire(FsmEvent.MOTION_DONE)
    if isinstance(outcome, RepositionSignal):
        fsm.fire(FsmEvent.REPOSITION, outcome.reason)
        report = grade_trial(None, scene, reposition_reason=outcome.reason.value)
        return TrialResult(index, scene_seed, report, None, fsm.state.value)

    target = outcome
    fsm.fire(FsmEvent.DETECT_OK, target)
    jitter = np.zeros(3)
    jitter[:2] = rng.normal(0.0, cfg.approach_error_sigma, size=2)
    ground = float(scene.terrain.height(target.point[0], target.point[1]))
    collided = (target.point[2] - ground < cfg.collision.margin
                and rng.random() < cfg.collision.probability)
    if collided:
        fsm.fire(FsmEvent.COLLISION_STOP)
        report = grade_trial(target, scene, None, None, cfg.match_radius, collided=True)
        return TrialResult(index, scene_seed, report, target.point.tolist(), fsm.state.value)

    grasp = simulate_grasp(target, scene, jitter, cfg.gripper)
    fsm.fire(FsmEvent.MOTION_DONE)
    insertion = None
    if grasp.captured:
        stalk = scene.stalks[grasp.stalk_id]
        fsm.fire(FsmEvent.CONTACT_MADE)
        delta = simulate_vblock_alignment(grasp.offset, stalk, cfg.gripper)
        fsm.fire(FsmEvent.CONTACT_MADE)
        insertion = simulate_insertion(delta, stalk, cfg.gripper, grasp.approach_angle,
                                       z_target=cfg.z_target)
        for ev in (FsmEvent.ACTUATOR_EXTENDED, FsmEvent.ACTUATOR_RETRACTED,
                   FsmEvent.LOGGER_RELEASED):
            fsm.fire(ev)
    else:
        # the actuator extends without ever touching a stalk
        fsm.fire(FsmEvent.MOTION_DONE)
    report = grade_trial(target, scene, grasp, insertion, cfg.match_radius)
    return TrialResult(index, scene_seed, report, target.point.tolist(), fsm.state.value)


def worker_count() -> int:
    cap = os.environ.get("CORNPOINT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _run_one(args):
    cfg, index, seed = args
    return run_trial(cfg, index, seed)


def run_trials(cfg: RunConfig, n_trials: int, seed: int, workers: Optional[int] = None) -> List[TrialResult]:
    """Independent trials, results ordered by trial index regardless of worker count."""
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, k, seed) for k in range(n_trials)]
    if workers <= 1 or n_trials == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n_trials // (4 * workers))))


def _stats(values: Sequence[float]) -> dict:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "mean": None, "median": None, "p95": None}
    return {"n": int(v.size), "mean": float(v.mean()), "median": float(np.median(v)),
            "p95": float(np.percentile(v, 95))}


@dataclass
class FunnelSummary:
    n_trials: int
    counts: Dict[str, int]
    rates: Dict[str, float]
    pose_error: dict
    failure_stages: Dict[str, int]
    reposition_reasons: Dict[str, int]

    def to_dict(self) -> dict:
        return {"n_trials": self.n_trials, "counts": self.counts, "rates": self.rates,
                "paper_rates": PAPER_FUNNEL, "pose_error_m": self.pose_error,
                "failure_stages": self.failure_stages,
                "reposition_reasons": self.reposition_reasons}


def summarize(results: Sequence[TrialResult]) -> FunnelSummary:
    n = len(results)
    counts = {c: sum(getattr(r.report, c) for r in results) for c in CRITERIA}
    rates = {c: counts[c] / n for c in CRITERIA}
    stages = {s.value: 0 for s in FailureStage}
    stages["Success"] = 0
    reasons = {r.value: 0 for r in RepositionReason}
    for r in results:
        fs = r.report.failure_stage
        stages[fs.value if fs else "Success"] += 1
        if r.report.reposition_reason:
            reasons[r.report.reposition_reason] += 1
    errors = [r.report.pose_error for r in results if r.report.detected]
    return FunnelSummary(n, counts, rates, _stats(errors), stages, reasons)


def evaluate(cfg: RunConfig, n_trials: Optional[int] = None, seed: Optional[int] = None,
             workers: Optional[int] = None) -> Tuple[FunnelSummary, List[TrialResult]]:
    n = cfg.n_trials if n_trials is None else n_trials
    s = cfg.seed if seed is None else seed
    results = run_trials(cfg, n, s, workers)
    return summarize(results), results


def format_funnel_table(summary: FunnelSummary) -> str:
    labels = {"detected": "Detected", "grasped": "Grasped", "inserted": "Inserted",
              "pads_covered": "Pads covered", "through_pith": "Through pith"}
    lines = [f"Insertion funnel over {summary.n_trials} trials",
             f"{'criterion':<14}{'count':>7}{'rate':>8}  {'':<20}{'field':>7}"]
    for c in CRITERIA:
        rate = summary.rates[c]
        bar = "#" * int(round(rate * 20))
        lines.append(f"{labels[c]:<14}{summary.counts[c]:>7}{rate:>8.1%}  {bar:<20}"
                     f"{PAPER_FUNNEL[c]:>7.1%}")
    pe = summary.pose_error
    if pe["n"]:
        lines.append(f"lateral pose error: mean {pe['mean'] * 1000:.2f} mm, "
                     f"median {pe['median'] * 1000:.2f} mm, p95 {pe['p95'] * 1000:.2f} mm")
    stages = ", ".join(f"{k}={v}" for k, v in summary.failure_stages.items())
    lines.append(f"outcome by stage: {stages}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pose accuracy benchmark

RANGE_BINS = (("<0.3", 0.0, 0.3), ("0.3-0.5", 0.3, 0.5), (">0.5", 0.5, math.inf))
DIAMETER_BINS = (("<20mm", 0.0, 0.020), ("20-30mm", 0.020, 0.030), (">30mm", 0.030, math.inf))


@dataclass
class PoseSample:
    index: int
    error: Optional[float]
    range: Optional[float]
    diameter: Optional[float]
    reposition: Optional[str] = None


def pose_sample(cfg: RunConfig, index: int, seed: int) -> PoseSample:
    ss_scene, ss_frames, ss_ransac = trial_seed(seed, index, stream=1).spawn(3)
    scene = generate_scene(cfg.scene, _int_seed(ss_scene))
    frames = render_trial_frames(scene, cfg, ss_frames.spawn(cfg.selection.n_frames))
    if not frames:
        return PoseSample(index, None, None, None, RepositionReason.NO_DETECTIONS.value)
    outcome = run_detection(frames, cfg, np.random.default_rng(ss_ransac)).outcome
    if isinstance(outcome, RepositionSignal):
        return PoseSample(index, None, None, None, outcome.reason.value)
    sid, err = nearest_stalk(scene, outcome.point)
    stalk = scene.stalks[sid]
    truth = stalk.point_at(outcome.point[2])
    rng_cam = float(frames[0].cam_pose.inverse().apply(truth)[2])
    return PoseSample(index, err, rng_cam, stalk.section.a + stalk.section.b)


def _pose_one(args):
    return pose_sample(*args)


def pose_bench(cfg: RunConfig, n_scenes: int, seed: Optional[int] = None,
               workers: Optional[int] = None) -> dict:
    """Horizontal error of the consensus target against the nearest true axis."""
    s = cfg.seed if seed is None else seed
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, k, s) for k in range(n_scenes)]
    if workers <= 1:
        samples = [_pose_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_pose_one, jobs))
    ok = [p for p in samples if p.error is not None]

    def binned(attr, bins):
        return {name: _stats([p.error for p in ok if lo <= getattr(p, attr) < hi])
                for name, lo, hi in bins}

    reasons = {r.value: 0 for r in RepositionReason}
    for p in samples:
        if p.reposition:
            reasons[p.reposition] += 1
    return {
        "schema_version": 1,
        "n_scenes": n_scenes,
        "seed": s,
        "n_targets": len(ok),
        "reposition_reasons": reasons,
        "lateral_error_m": _stats([p.error for p in ok]),
        "by_range_m": binned("range", RANGE_BINS),
        "by_diameter": binned("diameter", DIAMETER_BINS),
        "samples": [{"index": p.index, "error": p.error, "range": p.range,
                     "diameter": p.diameter, "reposition": p.reposition} for p in samples],
    }
