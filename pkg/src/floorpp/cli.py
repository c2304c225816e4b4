"""Command-line entry point.

Subcommands: synth, train, infer, eval, rasterize. Progress goes to stderr,
machine-readable results to stdout/files. Exit codes: 0 success, 1 I/O,
2 config/schema, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ingest, metrics, pillars, pipeline, plan as plan_mod, synth
from .errors import (CheckpointError, CloudFormatError, ConfigError,
                     PlanSchemaError, TrainingDiverged)
from .nn import PillarNet

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("floorpp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floorpp",
        description="Reconstruct vector floor plans from building-story point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--config", default=None, help="flat JSON config file")

    p_train = sub.add_parser("train", help="train on a synth dataset directory")
    p_train.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p_train.add_argument("--out", required=True, help="output checkpoint path")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--tile-size", type=int, default=None, dest="tile_size")
    p_train.add_argument("--max-tiles", type=int, default=None, dest="max_tiles")
    p_train.add_argument("--log", default=None, help="JSONL training log path")
    p_train.add_argument("--config", default=None)

    p_infer = sub.add_parser("infer", help="reconstruct a plan from a point cloud")
    p_infer.add_argument("--model", required=True, help="checkpoint path")
    p_infer.add_argument("--cloud", required=True, help="input point cloud")
    p_infer.add_argument("--out", required=True, help="output plan JSON")
    p_infer.add_argument("--svg", default=None, help="optional SVG rendering")
    p_infer.add_argument("--format", default=None,
                         choices=["xyz_ascii", "ply_ascii"], help="cloud format")
    p_infer.add_argument("--config", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a predicted plan against GT")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--report", required=True, help="output report JSON")
    p_eval.add_argument("--config", default=None)

    p_rast = sub.add_parser("rasterize", help="write the pillar grid as a debug PGM")
    p_rast.add_argument("--cloud", required=True)
    p_rast.add_argument("--out", required=True, help="output PGM path")
    p_rast.add_argument("--format", default=None,
                        choices=["xyz_ascii", "ply_ascii"])
    p_rast.add_argument("--config", default=None)
    return parser


def _config_from_args(args, keys) -> pipeline.PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    return pipeline.load_pipeline_config(args.config, overrides)


def _cloud_format(path, explicit) -> str:
    if explicit:
        return explicit
    return "ply_ascii" if str(path).lower().endswith(".ply") else "xyz_ascii"


def cmd_synth(args) -> int:
    if args.scenes < 1:
        raise ConfigError(f"--scenes must be >= 1, got {args.scenes}")
    config = _config_from_args(args, ["seed"])
    manifest = synth.generate_dataset(config.synth_config(), args.scenes, args.out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args, ["epochs", "lr", "seed", "tile_size"])
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    log_path = args.log or (str(args.out) + ".log.jsonl")
    log.info("training: data=%s epochs=%d lr=%g decay@%d seed=%d",
             data_dir, config.epochs, config.lr, config.decay_epoch, config.seed)
    _net, history = pipeline.train_from_directory(
        data_dir, args.out, config, log_path=log_path, max_tiles=args.max_tiles)
    final = history[-1]
    log.info("done: %d steps, final l_total=%.4f", len(history), final.l_total)
    print(args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    net = PillarNet.load(args.model)
    config = _config_from_args(args, [])
    cloud = ingest.load_cloud(args.cloud, _cloud_format(args.cloud, args.format))
    if net.config.n_bins != config.n_bins:
        config = pipeline.load_pipeline_config(
            args.config, {"n_bins": net.config.n_bins})
    plan = pipeline.infer_floorplan(net, cloud, config)
    plan_mod.save_plan(plan, args.out)
    if args.svg:
        plan_mod.render_svg(plan, args.svg)
    log.info("plan: %d corners, %d edges -> %s",
             len(plan.corners), len(plan.edges), args.out)
    print(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = plan_mod.load_plan(args.pred)
    gt = plan_mod.load_plan(args.gt)
    config = _config_from_args(args, [])
    report = metrics.evaluate(pred, gt, config.metric_config())
    metrics.write_report(report, args.report)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_rasterize(args) -> int:
    config = _config_from_args(args, [])
    cloud = ingest.load_cloud(args.cloud, _cloud_format(args.cloud, args.format))
    if cloud.is_empty:
        log.warning("empty cloud: writing a 1x1 black PGM")
        pillars.write_pgm(np.zeros((1, 1)), args.out)
        print(args.out)
        return EXIT_OK
    aligned, band, _transform = pipeline.preprocess_cloud(cloud, config)
    grid = pillars.rasterize(aligned, band, config.pillar_config())
    pillars.write_pgm(pillars.grid_to_image(grid), args.out)
    print(args.out)
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "rasterize": cmd_rasterize,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, PlanSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc} (last checkpoint: {exc.last_checkpoint})", file=sys.stderr)
        return EXIT_NUMERIC
    except (CloudFormatError, CheckpointError, FileNotFoundError, IsADirectoryError,
            PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
