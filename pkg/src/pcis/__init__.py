"""Desk-scale point-cloud instance segmentation.

Samples candidate points, predicts per-sample coefficient vectors and a
shared prototype bank, assembles an overcomplete mask set by linear
combination, and reduces it with threshold + NMS; room scenes run in
overlapping blocks whose predictions are merged back together.
"""

from . import kernels
from .bench import StageTiming, TimingReport, benchmark, benchmark_kernels, timing_table
from .blocking import (
    Block,
    SceneSegmentation,
    block_merge,
    partition,
    sample_block,
    training_blocks,
)
from .core import (
    CoefficientMatrix,
    Config,
    MaskSet,
    PointCloud,
    PrototypeMatrix,
    SampledSet,
    ShapeError,
    seeded_rng,
)
from .heads import (
    ModelParams,
    Network,
    StateError,
    TrainingError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import EvalReport, coverage, evaluate, evaluate_scene, iou, precision_recall
from .pipeline import (
    InstancePrediction,
    TrainState,
    adam_step,
    assemble_masks,
    infer_block,
    loss_and_gradients,
    nms,
    threshold_masks,
    train,
)
from .sampling import farthest_point_sample, ground_truth_at, sample_points
from .sceneio import (
    GenerationError,
    ParseError,
    SyntheticSceneSpec,
    dump_prototypes,
    generate_scene,
    load_scene,
    save_scene,
)

__version__ = "0.1.0"

__all__ = [
    "Block",
    "CoefficientMatrix",
    "Config",
    "EvalReport",
    "GenerationError",
    "InstancePrediction",
    "MaskSet",
    "ModelParams",
    "Network",
    "ParseError",
    "PointCloud",
    "PrototypeMatrix",
    "SampledSet",
    "SceneSegmentation",
    "ShapeError",
    "StageTiming",
    "StateError",
    "SyntheticSceneSpec",
    "TimingReport",
    "TrainState",
    "TrainingError",
    "adam_step",
    "assemble_masks",
    "benchmark",
    "benchmark_kernels",
    "block_merge",
    "coverage",
    "dump_prototypes",
    "evaluate",
    "evaluate_scene",
    "farthest_point_sample",
    "generate_scene",
    "ground_truth_at",
    "infer_block",
    "init_params",
    "iou",
    "kernels",
    "load_checkpoint",
    "load_scene",
    "loss_and_gradients",
    "nms",
    "partition",
    "precision_recall",
    "sample_block",
    "sample_points",
    "save_checkpoint",
    "save_scene",
    "seeded_rng",
    "threshold_masks",
    "timing_table",
    "train",
    "training_blocks",
]
