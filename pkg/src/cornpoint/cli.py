"""Command line entry point: generate | detect | evaluate | pose-bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .harness import (
    RunConfig,
    _int_seed,
    config_to_dict,
    evaluate,
    format_funnel_table,
    load_config,
    pose_bench,
    render_trial_frames,
    run_detection,
    trial_seed,
)
from .scene import ConfigError, generate_scene

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4


def _config(path: Optional[str]) -> RunConfig:
    return load_config(path) if path else RunConfig().validate()


def cmd_generate(args) -> int:
    cfg = _config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output or "scene_out")
    for k in range(cfg.n_scenes):
        # same derivation as trial k of `evaluate`, so scenes can be replayed
        ss_scene, ss_frames, _, _ = trial_seed(seed, k).spawn(4)
        scene = generate_scene(cfg.scene, _int_seed(ss_scene))
        d = out if cfg.n_scenes == 1 else out / f"scene_{k:03d}"
        io.write_scene(d, scene)
        frames = render_trial_frames(scene, cfg, ss_frames.spawn(cfg.selection.n_frames))
        if not frames:
            print(f"warning: scene {k} has no stalk in view", file=sys.stderr)
        for i, frame in enumerate(frames):
            io.write_frame(d, i, frame)
        print(f"wrote {d} ({len(scene.stalks)} stalks, {len(frames)} frames)")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args.config)
    frames = io.read_frames(args.frames)
    indices = io.frame_indices(args.frames)
    if frames:
        res = run_detection(frames, cfg, np.random.default_rng(cfg.seed))
        per_frame = [{"frame_index": i, "candidates": [c.to_dict() for c in cands],
                      "best": None if b is None else b.instance_id}
                     for i, cands, b in zip(indices, res.frames_candidates, res.frame_bests)]
        outcome = res.outcome.to_dict()
    else:
        per_frame, outcome = [], {"reposition": "NoDetections"}
    report = {"schema_version": io.SCHEMA_VERSION, "frames": per_frame, "result": outcome}
    text = io.dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if "point" in outcome:
        p = outcome["point"]
        print(f"target ({p[0]:.4f}, {p[1]:.4f}, {p[2]:.4f}) m, cluster size "
              f"{outcome['source_cluster_size']}", file=sys.stderr)
    else:
        print(f"reposition: {outcome['reposition']}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    n = cfg.n_trials if args.trials is None else args.trials
    if n < 1:
        raise ConfigError("--trials must be >= 1")
    summary, results = evaluate(cfg, n, seed)
    doc = {"schema_version": io.SCHEMA_VERSION, "seed": seed, "summary": summary.to_dict(),
           "trials": [r.to_dict() for r in results], "config": config_to_dict(cfg)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "summary.json", doc)
        (out / "funnel.txt").write_text(format_funnel_table(summary))
    if args.json:
        sys.stdout.write(io.dumps(doc))
    else:
        sys.stdout.write(format_funnel_table(summary))
    return EXIT_OK


def cmd_pose_bench(args) -> int:
    cfg = _config(args.config)
    n = 100 if args.scenes is None else args.scenes
    if n < 1:
        raise ConfigError("--scenes must be >= 1")
    report = pose_bench(cfg, n, args.seed)
    if not args.samples:
        report.pop("samples")
    text = io.dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cornpoint",
                                description="Synthetic cornstalk detection and sensor insertion harness.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scene and its rendered frames")
    g.add_argument("--config", required=True, help="YAML/JSON run config or a shipped name")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="run detection and consensus on a frames directory")
    d.add_argument("--frames", required=True, help="directory of frame_NNN_* files")
    d.add_argument("--config")
    d.add_argument("--out", help="write the JSON report here instead of stdout")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="Monte Carlo insertion trials")
    e.add_argument("--config")
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="directory for summary.json and funnel.txt")
    e.add_argument("--json", action="store_true", help="print the JSON report instead of the table")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("pose-bench", help="lateral pose error statistics")
    b.add_argument("--config")
    b.add_argument("--scenes", type=int, help="number of scenes (default 100)")
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.add_argument("--samples", action="store_true", help="include per-scene samples")
    b.set_defaults(func=cmd_pose_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except io.FrameFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
