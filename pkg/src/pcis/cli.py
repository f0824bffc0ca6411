"""Command-line entry point: generate / train / infer / eval / bench.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows
from --seed (or the config file); identical inputs give byte-identical
output files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import kernels
from .bench import benchmark, benchmark_kernels, timing_table
from .blocking import block_merge, partition, training_blocks
from .core import Config, parse_key_values, seeded_rng
from .heads import TrainingError, load_checkpoint, save_checkpoint
from .metrics import evaluate, evaluate_scene, report_table
from .pipeline import infer_block, load_predictions, train
from .sceneio import (
    GenerationError,
    ParseError,
    SyntheticSceneSpec,
    dump_prototypes,
    generate_scene,
    load_scene,
    save_scene,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pcis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("generate", help="write synthetic labeled scenes")
    common(g)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--scenes", type=int, default=1, help="number of scenes")
    g.add_argument("--format", choices=("binary", "ascii"), default="binary")

    t = sub.add_parser("train", help="train on labeled scenes, save a checkpoint")
    common(t)
    t.add_argument("--scenes", required=True, help="directory of scene files")
    t.add_argument("--out", required=True, help="checkpoint path")

    i = sub.add_parser("infer", help="segment a scene with a checkpoint")
    common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--scene", required=True)
    i.add_argument("--out", required=True, help="prediction dump path")
    i.add_argument("--threshold", type=float, help="mask probability threshold")
    i.add_argument("--nms-iou", type=float, help="NMS IoU threshold")
    i.add_argument("--prototypes", help="directory for prototype activation dumps")

    e = sub.add_parser("eval", help="score a prediction dump against labels")
    common(e)
    e.add_argument("--scene", required=True, nargs="+", help="labeled scene file(s)")
    e.add_argument(
        "--predictions", required=True, nargs="+", help="dump per scene, same order"
    )
    e.add_argument("--out", help="also write the table to this path")

    b = sub.add_parser("bench", help="per-stage latency benchmark")
    common(b)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--scene", required=True)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--grouping", action="store_true", help="time the block merge stage as well")
    b.add_argument(
        "--kernels", action="store_true", help="also compare kernel backends"
    )
    return parser


def _apply_overrides(args, config: Config) -> Config:
    """Layering: base config, then --config file, then explicit flags."""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = Config.from_mapping(parse_key_values(fh.read()))
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    if getattr(args, "threshold", None) is not None:
        config = config.replace(mask_threshold=args.threshold)
    if getattr(args, "nms_iou", None) is not None:
        config = config.replace(nms_iou=args.nms_iou)
    return config


def _load_config(args) -> Config:
    return _apply_overrides(args, Config())


def _scene_paths(directory: str) -> list:
    names = sorted(
        n for n in os.listdir(directory) if n.endswith((".pcis", ".txt"))
    )
    if not names:
        raise FileNotFoundError(f"no scene files in {directory}")
    return [os.path.join(directory, n) for n in names]


def _training_blocks(scene_paths, config: Config):
    scenes = [load_scene(p, n_channels=config.n_channels) for p in scene_paths]
    return training_blocks(scenes, config, seeded_rng(config.seed))


def cmd_generate(args) -> int:
    config = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    ext = ".pcis" if args.format == "binary" else ".txt"
    for i in range(args.scenes):
        spec = SyntheticSceneSpec(seed=config.seed + i)
        cloud = generate_scene(spec)
        save_scene(os.path.join(args.out, f"scene_{i:03d}{ext}"), cloud, args.format)
    print(f"wrote {args.scenes} scene(s) to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    blocks = _training_blocks(_scene_paths(args.scenes), config)
    params, losses = train(blocks, config)
    for epoch, loss in enumerate(losses):
        print(f"epoch {epoch:3d} loss {loss:.6f}")
    save_checkpoint(args.out, params, config)
    print(f"checkpoint: {args.out}")
    return 0


def _segment_scene(params, config, cloud):
    predictions = []
    for block in partition(cloud, config.block_size, config.stride):
        kept = infer_block(params, block, config)
        if not kept:
            continue
        masks = np.stack([p.mask for p in kept])
        scores = np.asarray([p.score for p in kept])
        predictions.append((block, masks, scores))
    return block_merge(
        predictions, cloud.n_points, config.merge_iou, config.min_instance_points
    )


def cmd_infer(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    config = _apply_overrides(args, config)
    cloud = load_scene(args.scene, n_channels=config.n_channels)
    segmentation = _segment_scene(params, config, cloud)
    with open(args.out, "w") as fh:
        for inst in range(segmentation.n_instances):
            indices = np.flatnonzero(segmentation.instance_ids == inst)
            cells = [f"{float(segmentation.confidences[inst]):.6f}"]
            cells += [str(int(x)) for x in indices]
            fh.write(" ".join(cells) + "\n")
    if args.prototypes:
        from .blocking import model_view
        from .heads import Network
        from .sampling import sample_points

        block = partition(cloud, config.block_size, config.stride)[0]
        view = model_view(block)
        net = Network(params, k_neighbors=config.k_neighbors)
        k = min(config.n_samples, view.n_points)
        _f, protos, _c = net.forward(view, sample_points(view, k, 0))
        os.makedirs(args.prototypes, exist_ok=True)
        dump_prototypes(block.cloud, protos, args.prototypes)
    print(f"instances: {segmentation.n_instances} -> {args.out}")
    return 0


def _gt_masks(cloud):
    labels = cloud.instance_labels
    if labels is None:
        raise ValueError("eval scene has no instance labels")
    return [labels == u for u in np.unique(labels) if u >= 0]


def cmd_eval(args) -> int:
    if len(args.scene) != len(args.predictions):
        raise ValueError(
            f"{len(args.scene)} scenes but {len(args.predictions)} prediction dumps"
        )
    config = _load_config(args)
    rows = []
    for scene_path, pred_path in zip(args.scene, args.predictions):
        cloud = load_scene(scene_path, n_channels=config.n_channels)
        gt = _gt_masks(cloud)
        masks, scores = load_predictions(pred_path, cloud.n_points)
        rows.append(evaluate_scene(gt, masks, scores))
    table = report_table(evaluate(rows))
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    return 0


def cmd_bench(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    config = _apply_overrides(args, config)
    cloud = load_scene(args.scene, n_channels=config.n_channels)
    blocks = partition(cloud, config.block_size, config.stride)
    report = benchmark(
        params,
        blocks,
        config,
        repetitions=args.reps,
        warmup=args.warmup,
        time_grouping=args.grouping,
    )
    sys.stdout.write(f"backend: {kernels.BACKEND}\n")
    sys.stdout.write(timing_table(report))
    if args.kernels:
        for name, st in benchmark_kernels(
            repetitions=args.reps, warmup=args.warmup
        ).items():
            sys.stdout.write(
                f"kernels[{name}]: {st.mean_ms:.3f} +/- {st.std_ms:.3f} ms"
                f" (median {st.median_ms:.3f}, p99 {st.p99_ms:.3f})\n"
            )
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ParseError, GenerationError, TrainingError, ValueError) as exc:
        print(f"pcis: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
