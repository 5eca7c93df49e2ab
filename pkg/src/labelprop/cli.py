"""``labelprop`` command line."""

from __future__ import annotations

import argparse
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .cloud import AugmentParams, Pose, ValidationError, augment
from .config import PRESETS, dump_config, load_config
from .evaluation import DATASETS, MAPPINGS, confusion, emit_report, iou, load_dataset, load_mapping, remap
from .inference import Pipeline
from .io import PredictionStore, SequenceDir, read_labels, read_scan, write_labels, write_scan
from .propagation import PropagationStats
from .runs import SequenceSource, make_segmenter, parse_frames, run_pipeline, truth_fed_propagation, write_sequence
from .sequence import Frame, decimate_fibers
from .synthetic import StreetScene


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--preset", choices=sorted(PRESETS), default=default)
    parser.add_argument("--kernels", choices=("auto", "compiled", "python"), default=default,
                        help="search/propagation kernel implementation (default: compiled when built)")


def _sequence_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sequence", required=True,
                   help="sequence directory, or a sequence name under $LABELPROP_DATASET_ROOT/sequences")
    p.add_argument("--frames", help="'start:stop' or 'i,j,k' (default: all)")
    p.add_argument("--no-conjugate", action="store_true", help="use poses.txt as-is even if calib.txt exists")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelprop", description="Label propagation for LiDAR sequences.")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)

    p = sub.add_parser("pipeline", parents=[common], help="run the full pipeline and write .label files")
    _sequence_options(p)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--segmenter", choices=("oracle", "file", "constant"), help="overrides config 'backend'")
    p.add_argument("--predictions", type=Path, help="prediction root for the file segmenter")
    p.add_argument("--noise", type=float)

    p = sub.add_parser("propagate", parents=[common], help="ground-truth-fed propagation statistics")
    _sequence_options(p)
    p.add_argument("--per-frame", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="IoU report of prediction files against truth")
    p.add_argument("--truth", type=Path, required=True, help="directory of truth .label files")
    p.add_argument("--pred", type=Path, required=True, help="directory of predicted .label files (same relative paths)")
    p.add_argument("--mapping", default="semantickitti", choices=MAPPINGS + DATASETS)
    p.add_argument("--truth-side", choices=("source", "target"), default="source")
    p.add_argument("--pred-side", choices=("source", "target"), default="source")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--zero-union", choices=("exclude", "zero"), default="exclude")
    p.add_argument("--name", help="row name in the report (default: prediction directory name)")
    p.add_argument("--output", type=Path)

    p = sub.add_parser("decimate", parents=[common], help="drop fibers, e.g. 64 to 32 beams")
    p.add_argument("--input", type=Path, required=True, help="sequence directory")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--keep-every", type=int, default=2)
    p.add_argument("--beams", type=int, default=64, help="beam count of the input sensor")

    p = sub.add_parser("bench", parents=[common], help="pipeline throughput on a synthetic sequence")
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--points-per-frame", type=int, default=8000)

    p = sub.add_parser("augment", parents=[common], help="augment one scan file")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--no-rotate", action="store_true")
    p.add_argument("--angle", type=float, help="fixed z rotation in radians")
    p.add_argument("--scale", type=float, nargs=2, metavar=("LO", "HI"), default=(0.95, 1.05))
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--flip-x", type=float, default=0.0, help="probability of y -> -y")
    p.add_argument("--flip-y", type=float, default=0.0, help="probability of x -> -x")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic labelled sequence")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--points-per-frame", type=int, default=8000)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def _config(args, **overrides):
    return load_config(args.config, args.preset, seed=args.seed, **overrides)


def _source(args, config) -> SequenceSource:
    return SequenceSource(SequenceDir.locate(args.sequence), load_dataset(config.dataset),
                          conjugate_poses=not args.no_conjugate)


def cmd_pipeline(args) -> int:
    config = _config(args, backend=args.segmenter, noise=args.noise)
    src = _source(args, config)
    ids = parse_frames(args.frames, src.seq.frame_ids)
    store = None
    if config.backend == "file":
        if args.predictions is None:
            raise ValidationError("--predictions is required with the file segmenter")
        store = PredictionStore(args.predictions, src.name, id_map=src.dataset.to_class)
    schema = src.dataset.schema
    segmenter = make_segmenter(config, schema, truth=src.truth if config.backend == "oracle" else None,
                               predictions=store)
    pipeline = Pipeline(config, schema, segmenter)
    out = PredictionStore(args.output, src.name)
    frames = (src.frame(i) for i in ids)
    for _ in run_pipeline(frames, pipeline, src.dataset, out):
        pass
    print(f"wrote {len(ids)} frames to {out.root / out.sequence}")
    print(pipeline.timing_report())
    return 0


def _format_stats(s: PropagationStats) -> str:
    return (f"static_coverage={100 * s.static_coverage:.2f}% static_accuracy={100 * s.static_accuracy:.2f}% "
            f"dynamic_mislabel={100 * s.dynamic_mislabel_rate:.2f}% "
            f"(static {s.num_static}, dynamic {s.num_dynamic})")


def cmd_propagate(args) -> int:
    config = _config(args)
    src = _source(args, config)
    ids = parse_frames(args.frames, src.seq.frame_ids)
    stats = truth_fed_propagation(src.frames(ids), config, src.dataset.schema)
    if args.per_frame:
        for i, s in zip(ids, stats):
            print(f"frame {i:06d} {_format_stats(s)}")
    total = sum(stats[1:], stats[0]) if stats else PropagationStats()
    print(f"total {_format_stats(total)}")
    return 0


def _label_files(root: Path) -> dict[Path, Path]:
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    return {p.relative_to(root): p for p in sorted(root.rglob("*.label"))}


def cmd_evaluate(args) -> int:
    mapping = load_mapping(args.mapping)
    truth_ds, pred_ds = mapping.dataset(args.truth_side), mapping.dataset(args.pred_side)
    truth_files = _label_files(args.truth)
    if not truth_files:
        raise FileNotFoundError(f"no .label files under {args.truth}")
    pred_files = _label_files(args.pred)
    missing = [str(r) for r in truth_files if r not in pred_files]
    if missing:
        raise FileNotFoundError(f"{len(missing)} truth files have no prediction, first: {missing[0]}")
    total = None
    for rel, path in truth_files.items():
        t_raw, _ = read_labels(path)
        p_raw, _ = read_labels(pred_files[rel], expected=len(t_raw))
        t = remap(truth_ds.to_class(t_raw), mapping, args.truth_side)
        p = remap(pred_ds.to_class(p_raw), mapping, args.pred_side)
        cm = confusion(t, p, mapping.num_classes)
        total = cm if total is None else total + cm
    result = iou(total, args.zero_union)
    name = args.name or args.pred.resolve().name
    report = emit_report({name: result}, mapping.coarse_names, args.format)
    if args.output:
        args.output.write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_decimate(args) -> int:
    src = SequenceDir(args.input)
    dst = SequenceDir(args.output)
    kept_beams = set()
    for i in src.frame_ids:
        cloud = read_scan(src.scan_path(i))
        tagged = cloud.with_channels(index=np.arange(len(cloud), dtype=np.int64))
        out = decimate_fibers(Frame(tagged, Pose.identity(), i), args.keep_every, num_beams=args.beams).cloud
        kept_beams.update(np.unique(out.beam).tolist())
        write_scan(dst.scan_path(i), out)
        if src.label_path(i).exists():
            sem, inst = read_labels(src.label_path(i), expected=len(cloud))
            write_labels(dst.label_path(i), sem[out.index], inst[out.index])
    for name in ("poses.txt", "calib.txt", "times.txt"):
        if (src.root / name).exists():
            shutil.copyfile(src.root / name, dst.root / name)
    print(f"decimated {len(src.frame_ids)} frames: {args.beams} -> {len(kept_beams)} beams")
    return 0


def cmd_bench(args) -> int:
    config = _config(args, backend="constant")
    ds = load_dataset(config.dataset)
    scene = StreetScene(num_frames=args.frames, points_per_frame=args.points_per_frame, seed=config.seed)
    frames = [f for f, _ in scene.frames()]
    pipeline = Pipeline(config, ds.schema, make_segmenter(config, ds.schema))
    sizes = [r.accumulated_size for _, r in run_pipeline(frames, pipeline, ds)]
    print(f"kernels={kernels.BACKEND} mean accumulated points={np.mean(sizes):.0f} max={max(sizes)}")
    print(pipeline.timing_report())
    return 0


def cmd_augment(args) -> int:
    config = _config(args)
    params = AugmentParams(center=not args.no_center, rotate_z=not args.no_rotate, angle=args.angle,
                           scale=tuple(args.scale), noise_sigma=args.noise_sigma,
                           flip_x=args.flip_x, flip_y=args.flip_y)
    write_scan(args.output, augment(read_scan(args.input), params, config.seed))
    return 0


def cmd_synth(args) -> int:
    config = _config(args)
    scene = StreetScene(num_frames=args.frames, points_per_frame=args.points_per_frame, seed=config.seed)
    seq = write_sequence(args.output, scene.frames(), load_dataset("semantickitti"))
    print(f"wrote {args.frames} frames to {seq.root}")
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return 0


COMMANDS = {
    "pipeline": cmd_pipeline,
    "propagate": cmd_propagate,
    "evaluate": cmd_evaluate,
    "decimate": cmd_decimate,
    "bench": cmd_bench,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "config": cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.kernels:
        kernels.use(args.kernels)
    start = time.perf_counter()
    try:
        status = COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"labelprop {args.command}: error: {msg}", file=sys.stderr)
        return 1
    if args.command in ("pipeline", "propagate", "decimate"):
        print(f"elapsed {time.perf_counter() - start:.2f}s", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
