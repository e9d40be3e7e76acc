"""Command line interface.

Subcommands: localize, evaluate, gen-scene, dump-scoremaps, bench.
Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import cv2
import numpy as np

from .errors import PanolocError
from .geometry import Pose
from .pipeline import (LocalizationReport, PipelineConfig, bench_histograms,
                       dump_scoremaps, evaluate, load_config, localize)
from .scene_io import (generate_scene, load_panorama, load_pointcloud,
                       save_panorama, save_pointcloud, scene_spec_from_json)


def _load_gt_pose(path: str) -> Pose:
    with open(path) as f:
        doc = json.load(f)
    return Pose(np.array(doc["rotation"], dtype=float),
                np.array(doc["translation"], dtype=float))


def _apply_flag_overrides(config: PipelineConfig, args) -> PipelineConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "no_2d_map", False):
        updates["use_2d_map"] = False
    if getattr(args, "no_3d_map", False):
        updates["use_3d_map"] = False
    if getattr(args, "no_histogram_init", False):
        updates["histogram_init"] = False
    if getattr(args, "no_color_match", False):
        updates["color_match"] = False
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_localize(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    config = _apply_flag_overrides(config, args)
    report = localize(args.cloud, args.pano, config)
    if args.gt_pose:
        report.attach_ground_truth(_load_gt_pose(args.gt_pose))
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_evaluate(args) -> int:
    reports = []
    for path in args.reports:
        with open(path) as f:
            reports.append(LocalizationReport.from_dict(json.load(f)))
    summary = evaluate(reports, args.tau_t, args.tau_r)
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_gen_scene(args) -> int:
    with open(args.spec) as f:
        spec = scene_spec_from_json(f.read())
    os.makedirs(args.out_dir, exist_ok=True)
    reference, changed, queries = generate_scene(spec, args.seed or 0)
    save_pointcloud(reference, os.path.join(args.out_dir, "reference.ply"))
    save_pointcloud(changed, os.path.join(args.out_dir, "changed.ply"))
    for i, (pose, pano) in enumerate(queries):
        save_panorama(pano, os.path.join(args.out_dir, f"query_{i:03d}.png"))
        with open(os.path.join(args.out_dir, f"query_{i:03d}_pose.json"), "w") as f:
            json.dump({"rotation": pose.rotation.tolist(),
                       "translation": pose.translation.tolist()},
                      f, sort_keys=True, indent=2)
            f.write("\n")
    print(f"wrote scene with {len(queries)} queries to {args.out_dir}")
    return 0


def _cmd_dump_scoremaps(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    config = _apply_flag_overrides(config, args)
    cloud = load_pointcloud(args.cloud)
    query = load_panorama(args.pano)
    _, _, png_path, ply_path = dump_scoremaps(cloud, query, config, args.out_dir)
    print(f"wrote {png_path} and {ply_path}")
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    config = _apply_flag_overrides(config, args)
    cloud = load_pointcloud(args.cloud)
    query = load_panorama(args.pano)
    rows = bench_histograms(cloud, query, config)
    for method, ms in rows:
        print(f"{method:8s} {ms:10.4f} ms/view")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panoloc",
        description="Localize equirectangular panoramas against colored point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_inputs=True):
        if need_inputs:
            p.add_argument("--cloud", required=True, help="PLY point cloud")
            p.add_argument("--pano", required=True, help="PNG panorama (W=2H)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="cap internal worker threads")
        p.add_argument("--no-2d-map", action="store_true")
        p.add_argument("--no-3d-map", action="store_true")
        p.add_argument("--no-histogram-init", action="store_true")
        p.add_argument("--no-color-match", action="store_true")

    p = sub.add_parser("localize", help="run the full localization pipeline")
    add_common(p)
    p.add_argument("--gt-pose", help="JSON ground-truth pose for error reporting")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("evaluate", help="summarize JSON reports with ground truth")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--tau-t", type=float, default=0.05, help="translation threshold (m)")
    p.add_argument("--tau-r", type=float, default=5.0, help="rotation threshold (deg)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gen-scene", help="generate a synthetic test scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("dump-scoremaps", help="export 2D/3D score maps")
    add_common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_dump_scoremaps)

    p = sub.add_parser("bench", help="time fast vs. rendered histogram generation")
    add_common(p)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        cv2.setNumThreads(args.threads)
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        return args.func(args)
    except (PanolocError, OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
