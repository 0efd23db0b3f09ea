import numpy as np
import pytest

from cornpoint.geometry import Line3
from cornpoint.harness import load_config
from cornpoint.scene import (
    NoiseConfig,
    SceneConfig,
    SceneTruth,
    StalkTruth,
    Terrain,
    default_camera_pose,
    default_intrinsics,
    render_frame,
)
from cornpoint.geometry import EllipseSection


@pytest.fixture(scope="session")
def noiseless_cfg():
    return load_config("noiseless")


@pytest.fixture(scope="session")
def calibration_cfg():
    return load_config("calibration")


def single_stalk_scene(x=0.45, y=0.0, radius=0.01, b=None, direction=(0, 0, 1),
                       stiffness=0.2, pith=0.08, orientation=0.0) -> SceneTruth:
    stalk = StalkTruth(
        axis=Line3(np.array([x, y, 0.0]), np.asarray(direction, dtype=float)),
        section=EllipseSection(radius, radius if b is None else b, orientation),
        base_z=0.0,
        top_z=0.7,
        stiffness=stiffness,
        pith_top_z=pith,
    )
    return SceneTruth(stalks=[stalk], leaves=[], terrain=Terrain([]), row_spacing=0.75, rng_seed=0)


def noiseless_frame(scene, seed=0):
    return render_frame(scene, default_camera_pose(), default_intrinsics(), NoiseConfig.zero(), seed)


def flat_circular_scene_config(**kw) -> SceneConfig:
    base = dict(circular_fraction=1.0, terrain_amplitude=0.0, spacing_range=(0.10, 0.40),
                pith_range=(0.06, 0.10))
    base.update(kw)
    return SceneConfig(**base)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
