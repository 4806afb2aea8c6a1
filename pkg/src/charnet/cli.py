"""Command-line surface tying the pipeline together.

Subcommands: generate, preprocess, train, predict, evaluate, benchmark.
Every run is reproducible: the same command, seed, and inputs produce
byte-identical output files (nothing written contains a timestamp).

Exit codes: 0 success, 2 invalid input, 3 numeric failure (non-finite
loss), 4 malformed file, checksum, or version error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dental import TEETH_PER_ARCH, translate_annotation
from .errors import FormatError, InputError, NumericError
from .evaluation import (
    aggregate,
    benchmark_inference,
    evaluate_model,
    report_csv,
    report_text,
)
from .io import (
    POINT_FORMATS,
    PredictionSet,
    load_annotation,
    load_checkpoint,
    load_config,
    load_pointcloud,
    load_prediction,
    save_annotation,
    save_checkpoint,
    save_history,
    save_pointcloud,
    save_prediction,
)
from .network import predict_landmarks
from .pointcloud import PointCloud, preprocess
from .synthetic import generate_dataset
from .training import make_training_sample, split_dataset, train

_CLOUD_SUFFIXES = (".xyz", ".ply", ".obj")


def _cloud_for_model(descriptor, path):
    """Accept either a raw scan or an already preprocessed cloud.

    A file with exactly descriptor.num_points rows is taken as preprocessed
    (its last row must then validate as the null point); anything else goes
    through the canonical center -> downsample -> append-null chain.

    Returns the model-ready cloud plus the offset that maps model-frame
    coordinates back to the file's frame (zero for preprocessed input,
    whose original frame is unrecoverable).
    """
    n = descriptor.num_points
    pc = load_pointcloud(path)
    if len(pc) == n:
        return PointCloud(pc.points, has_null=True), np.zeros(3)
    return preprocess(pc, n=n - 1), pc.points.mean(axis=0)


def _load_dataset(data_dir, descriptor=None):
    """Pair every annotation in the directory with its same-stem cloud."""
    root = Path(data_dir)
    if not root.is_dir():
        raise InputError(f"no such data directory: {root}")
    annotations = sorted(root.glob("*.json"))
    if not annotations:
        raise InputError(f"no annotation files (*.json) in {root}")
    pairs = []
    for ann_path in annotations:
        ann = load_annotation(ann_path)
        for suffix in _CLOUD_SUFFIXES:
            cloud_path = ann_path.with_suffix(suffix)
            if cloud_path.is_file():
                break
        else:
            raise InputError(f"no point cloud next to {ann_path}")
        pairs.append((ann, cloud_path))
    return pairs


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(args.count, mix=args.mix, seed=args.seed)
    for sample in samples:
        stem = sample.annotation.model_id
        save_pointcloud(out / f"{stem}.xyz", sample.cloud)
        save_annotation(out / f"{stem}.json", sample.annotation)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_preprocess(args) -> int:
    pc = load_pointcloud(args.input)
    result = preprocess(pc, n=args.points)
    save_pointcloud(args.out, result)
    print(f"{args.input}: {len(pc)} points -> {len(result)} (including null point)")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.baseline:
        config = replace(config, baseline=True)
    descriptor = config.descriptor

    samples = []
    for ann, cloud_path in _load_dataset(args.data):
        cloud, offset = _cloud_for_model(descriptor, cloud_path)
        # landmarks must live in the same frame as the (centered) cloud
        samples.append(
            make_training_sample(cloud, translate_annotation(ann, -offset), sigma=config.sigma)
        )
    train_set, val_set, _ = split_dataset(samples, seed=config.seed)
    print(f"training on {len(train_set)} samples, validating on {len(val_set)}")

    result = train(train_set, config, val_samples=val_set or None)
    chosen = result.best_params if result.best_params is not None else result.params
    save_checkpoint(args.out, chosen)
    if result.best_epoch is not None:
        print(f"saved epoch-{result.best_epoch} checkpoint (best validation MEDE) to {args.out}")
    else:
        print(f"saved final checkpoint to {args.out}")
    if args.history:
        save_history(args.history, result.history)
    return 0


def _cmd_predict(args) -> int:
    params = load_checkpoint(args.ckpt)
    if params.descriptor.num_teeth != TEETH_PER_ARCH:
        raise InputError(
            f"prediction files require a {TEETH_PER_ARCH}-tooth model, "
            f"got {params.descriptor.num_teeth} teeth"
        )
    pc, offset = _cloud_for_model(params.descriptor, args.input)
    positions, in_mesh, presence = predict_landmarks(pc, params)
    pred = PredictionSet(
        model_id=Path(args.input).stem,
        positions=positions + offset,  # back to the input file's frame
        in_mesh=in_mesh,
        presence=presence,
    )
    save_prediction(args.out, pred)
    print(f"wrote {int(in_mesh.sum())}/{len(in_mesh)} in-mesh landmarks to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    gt_dir = Path(args.gt)
    if not gt_dir.is_dir():
        raise InputError(f"no such ground-truth directory: {gt_dir}")
    ground_truth = {}
    for path in sorted(gt_dir.glob("*.json")):
        ann = load_annotation(path)
        ground_truth[ann.model_id] = ann

    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise InputError(f"no such prediction directory: {pred_dir}")
    pred_paths = sorted(pred_dir.glob("*.json"))
    if not pred_paths:
        raise InputError(f"no prediction files (*.json) in {pred_dir}")

    evaluations = []
    for path in pred_paths:
        pred = load_prediction(path)
        if pred.model_id not in ground_truth:
            raise InputError(f"{path}: no ground-truth annotation for model {pred.model_id!r}")
        ann = ground_truth[pred.model_id]
        evaluations.append(evaluate_model(pred.positions, pred.in_mesh, ann))

    report = aggregate(evaluations, radius=args.radius)
    Path(args.out).write_text(report_csv(report))
    print(report_text(report))
    return 0


def _cmd_benchmark(args) -> int:
    params = load_checkpoint(args.ckpt)
    root = Path(args.data)
    if not root.is_dir():
        raise InputError(f"no such data directory: {root}")
    cloud_paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _CLOUD_SUFFIXES)
    if not cloud_paths:
        raise InputError(f"no point clouds ({', '.join(POINT_FORMATS)}) in {root}")
    clouds = [load_pointcloud(p) for p in cloud_paths]
    timing = benchmark_inference(params, clouds, warmup=args.warmup, reps=args.reps)
    print(timing.format_row())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charnet",
        description="Tooth landmark detection on dental point clouds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset (clouds + annotations)")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--mix", choices=("uniform", "weighted"), default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("preprocess", help="center, downsample, and append the null point")
    p.add_argument("--in", dest="input", required=True, help="input cloud (xyz/ply/obj)")
    p.add_argument("--out", required=True, help="output cloud path")
    p.add_argument("--points", type=int, default=10000, help="mesh points to keep")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="directory of annotation + cloud pairs")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--baseline", action="store_true", help="unconditioned heatmap-only model")
    p.add_argument("--history", help="also write the per-epoch log as CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="detect landmarks on one cloud")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="input cloud")
    p.add_argument("--out", required=True, help="prediction JSON path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against annotations")
    p.add_argument("--pred", required=True, help="directory of prediction JSONs")
    p.add_argument("--gt", required=True, help="directory of annotation JSONs")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--radius", type=float, default=1.0, help="success radius in mm")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("benchmark", help="time preprocessing + inference")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="directory of raw point clouds")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--reps", type=int, default=10)
    p.set_defaults(func=_cmd_benchmark)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
