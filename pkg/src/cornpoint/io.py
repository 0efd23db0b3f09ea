"""On-disk formats shared by synthetic output and recorded field data.

A scene directory holds

* ``scene.json`` - ground truth (synthetic data only),
* ``frame_NNN_mask.png`` - 8-bit single channel, pixel value = instance label,
* ``frame_NNN_depth.png`` - 16-bit single channel, integer millimeters, 0 = invalid,
* ``frame_NNN_meta.json`` - intrinsics, camera pose, per-instance confidences.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .geometry import CameraIntrinsics, GeometryError, Pose3
from .scene import FrameObservation, SceneTruth

SCHEMA_VERSION = 1

_FRAME_RE = re.compile(r"frame_(\d+)_meta\.json$")


class FrameFormatError(ValueError):
    """A frame file is missing, unreadable or inconsistent."""


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path: Union[str, Path], obj) -> None:
    Path(path).write_text(dumps(obj))


def depth_to_png_array(depth: np.ndarray) -> np.ndarray:
    """Integer millimeters; depths the format cannot hold become 0 (invalid)."""
    mm = np.rint(np.asarray(depth) * 1000.0)
    mm[(mm < 0) | (mm > 65535)] = 0
    return mm.astype(np.uint16)


def write_frame(directory: Union[str, Path], index: int, frame: FrameObservation) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = d / f"frame_{index:03d}"
    Image.fromarray(frame.masks.astype(np.uint8)).save(f"{stem}_mask.png")
    Image.fromarray(depth_to_png_array(frame.depth)).save(f"{stem}_depth.png")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "frame_index": index,
        "intrinsics": frame.intrinsics.to_dict(),
        "cam_pose": frame.cam_pose.to_dict(),
        "confidences": list(frame.confidences),
    }
    if frame.instance_stalk_ids is not None:
        meta["instance_stalk_ids"] = list(frame.instance_stalk_ids)
    write_json(f"{stem}_meta.json", meta)


def _read_png(path: Path, modes) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in modes:
                raise FrameFormatError(f"{path.name}: unexpected image mode {im.mode}")
            return np.array(im)
    except FileNotFoundError as exc:
        raise FrameFormatError(f"missing {path.name}") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FrameFormatError(f"{path.name}: {exc}") from exc


def read_frame(directory: Union[str, Path], index: int) -> FrameObservation:
    d = Path(directory)
    stem = f"frame_{index:03d}"
    try:
        meta = json.loads((d / f"{stem}_meta.json").read_text())
        intr = CameraIntrinsics.from_dict(meta["intrinsics"])
        pose = Pose3.from_dict(meta["cam_pose"])
        conf = [float(c) for c in meta["confidences"]]
    except FileNotFoundError as exc:
        raise FrameFormatError(f"missing {stem}_meta.json") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, GeometryError) as exc:
        raise FrameFormatError(f"{stem}_meta.json: {exc}") from exc
    masks = _read_png(d / f"{stem}_mask.png", ("L", "P"))
    depth_mm = _read_png(d / f"{stem}_depth.png", ("I;16", "I;16B", "I"))
    shape = (intr.height, intr.width)
    if masks.shape != shape or depth_mm.shape != shape:
        raise FrameFormatError(f"{stem}: image size does not match intrinsics {shape}")
    if masks.max(initial=0) > len(conf):
        raise FrameFormatError(f"{stem}: label {masks.max()} has no confidence entry")
    if any(not 0.0 <= c <= 1.0 for c in conf):
        raise FrameFormatError(f"{stem}: confidences must lie in [0, 1]")
    ids = meta.get("instance_stalk_ids")
    return FrameObservation(masks=masks.astype(np.uint8), depth=depth_mm.astype(np.float64) / 1000.0,
                            intrinsics=intr, cam_pose=pose, confidences=conf,
                            instance_stalk_ids=None if ids is None else [int(i) for i in ids])


def frame_indices(directory: Union[str, Path]) -> List[int]:
    d = Path(directory)
    if not d.is_dir():
        raise FrameFormatError(f"{d} is not a directory")
    return sorted(int(m.group(1)) for p in d.iterdir() if (m := _FRAME_RE.match(p.name)))


def read_frames(directory: Union[str, Path]) -> List[FrameObservation]:
    return [read_frame(directory, i) for i in frame_indices(directory)]


def write_scene(directory: Union[str, Path], scene: SceneTruth) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_json(d / "scene.json", scene.to_dict())


def read_scene(path: Union[str, Path]) -> SceneTruth:
    p = Path(path)
    if p.is_dir():
        p = p / "scene.json"
    return SceneTruth.from_dict(json.loads(p.read_text()))
