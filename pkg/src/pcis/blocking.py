"""Overlapping-block partition of rooms and the scene-level merge of block predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PointCloud


@dataclass(frozen=True)
class Block:
    """A block cut from a parent scene.

    `point_indices` maps each row of `cloud` back to a scene point; rows may
    repeat after fixed-cardinality resampling.
    """

    origin: tuple
    point_indices: np.ndarray
    cloud: PointCloud

    def __post_init__(self):
        indices = np.ascontiguousarray(self.point_indices, dtype=np.int64)
        if indices.shape != (self.cloud.n_points,):
            raise ValueError(
                f"point_indices ({indices.shape}) must map every block row"
                f" ({self.cloud.n_points})"
            )
        object.__setattr__(self, "point_indices", indices)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))


@dataclass(frozen=True)
class SceneSegmentation:
    """Scene-level instance ids (-1 = unassigned) with per-instance confidences."""

    instance_ids: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.instance_ids, dtype=np.int64)
        conf = np.ascontiguousarray(self.confidences, dtype=np.float64)
        n_instances = len(conf)
        assigned = ids[ids >= 0]
        if assigned.size and assigned.max() >= n_instances:
            raise ValueError("instance id exceeds confidence table")
        object.__setattr__(self, "instance_ids", ids)
        object.__setattr__(self, "confidences", conf)

    @property
    def n_instances(self) -> int:
        return len(self.confidences)

    def instance_masks(self) -> list[np.ndarray]:
        return [self.instance_ids == g for g in range(self.n_instances)]


def partition(
    scene: PointCloud,
    block_size: float,
    stride: float,
    origin: tuple | None = None,
) -> list[Block]:
    """Cut the scene's xy bounding box into overlapping blocks.

    Grid origins are spaced by `stride` from the box minimum so the union of
    closed [origin, origin + block_size] intervals covers the box; empty
    blocks are dropped. Every scene point lands in at least one block.

    `origin` shifts the grid anchor; it must not exceed the box minimum in
    either axis (coverage would be lost). Jittered anchors give differently
    cropped blocks of the same scene, used as training-set augmentation.
    """
    if stride > block_size:
        raise ValueError("stride must not exceed block_size")
    xy = scene.positions[:, :2]
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    if origin is not None:
        if origin[0] > lo[0] or origin[1] > lo[1]:
            raise ValueError("grid origin must lie at or below the bounding box minimum")
        lo = np.asarray(origin, dtype=np.float64)
    counts = [_grid_count(hi[a] - lo[a], block_size, stride) for a in range(2)]
    blocks = []
    for ix in range(counts[0]):
        for iy in range(counts[1]):
            origin = (lo[0] + ix * stride, lo[1] + iy * stride)
            inside = (
                (xy[:, 0] >= origin[0])
                & (xy[:, 0] <= origin[0] + block_size)
                & (xy[:, 1] >= origin[1])
                & (xy[:, 1] <= origin[1] + block_size)
            )
            idx = np.flatnonzero(inside)
            if idx.size == 0:
                continue
            cloud = PointCloud(
                channels=scene.channels[idx],
                instance_labels=None
                if scene.instance_labels is None
                else scene.instance_labels[idx],
            )
            blocks.append(Block(origin=origin, point_indices=idx, cloud=cloud))
    return blocks


def _grid_count(extent: float, block_size: float, stride: float) -> int:
    if extent <= block_size:
        return 1
    return int(math.ceil((extent - block_size) / stride)) + 1


def sample_block(block: Block, points_per_block: int, rng: np.random.Generator) -> Block:
    """Resample a block to exactly `points_per_block` rows.

    Blocks with enough points are sampled without replacement (a permutation
    when sizes match); smaller blocks keep every original point at least
    once and fill the remainder with replacement.
    """
    n = block.cloud.n_points
    if n >= points_per_block:
        pick = rng.choice(n, size=points_per_block, replace=False)
    else:
        fill = rng.integers(0, n, size=points_per_block - n)
        pick = rng.permutation(np.concatenate([np.arange(n), fill]))
    cloud = PointCloud(
        channels=block.cloud.channels[pick],
        instance_labels=None
        if block.cloud.instance_labels is None
        else block.cloud.instance_labels[pick],
    )
    return Block(origin=block.origin, point_indices=block.point_indices[pick], cloud=cloud)


def model_view(block: Block) -> PointCloud:
    """The network sees blocks in block-local coordinates: xy centered on
    the block's point centroid, z absolute. Remaining channels unchanged.
    Translation normalization keeps learned features reusable across
    blocks regardless of where in the room they were cut."""
    ch = block.cloud.channels.copy()
    ch[:, 0] -= ch[:, 0].mean()
    ch[:, 1] -= ch[:, 1].mean()
    return PointCloud(channels=ch, instance_labels=block.cloud.instance_labels)


def training_blocks(scenes: list, config, rng: np.random.Generator) -> list[Block]:
    """Build the training dataset: partition each scene and resample blocks
    to the configured cardinality.

    With n_crops > 1 each scene is additionally partitioned on grids whose
    anchor is jittered below the bounding-box minimum by up to one stride,
    so the same instances appear under different croppings.
    """
    blocks = []
    for scene in scenes:
        if scene.instance_labels is None:
            raise ValueError("training scenes need instance labels")
        lo = scene.positions[:, :2].min(axis=0)
        for crop in range(config.n_crops):
            if crop == 0:
                origin = None
            else:
                origin = tuple(lo - rng.uniform(0.0, config.stride, size=2))
            for block in partition(scene, config.block_size, config.stride, origin):
                blocks.append(sample_block(block, config.points_per_block, rng))
    return blocks


def block_merge(
    block_predictions: list,
    n_scene_points: int,
    merge_iou: float = 0.5,
    min_instance_points: int = 10,
) -> SceneSegmentation:
    """Merge per-block instance masks into a scene segmentation.

    `block_predictions` holds (block, masks, scores) triples where `masks`
    is a boolean array over the block's rows (one row per kept instance).
    Masks are processed in descending confidence; a mask joins an existing
    scene instance when their IoU, restricted to the scene points shared by
    the mask's block and the blocks already backing that instance, exceeds
    `merge_iou`; otherwise it founds a new instance. Points claimed by
    several instances go to the higher-confidence claimant (ties to the
    lower instance id), and ids are compacted to 0..G-1.
    """
    candidates = []
    for block_idx, (block, masks, scores) in enumerate(block_predictions):
        masks = np.asarray(masks, dtype=bool)
        scores = np.asarray(scores, dtype=np.float64)
        if masks.ndim != 2 or masks.shape[0] != len(scores):
            raise ValueError("masks must be (n_instances, block_points) with one score per row")
        if masks.shape[1] != block.cloud.n_points:
            raise ValueError("mask width must match block point count")
        idx = block.point_indices
        if idx.size and (idx.min() < 0 or idx.max() >= n_scene_points):
            raise IndexError("block references out-of-range scene indices")
        region = np.zeros(n_scene_points, dtype=bool)
        region[idx] = True
        for mask_idx in range(masks.shape[0]):
            scene_mask = np.zeros(n_scene_points, dtype=bool)
            scene_mask[idx[masks[mask_idx]]] = True
            if scene_mask.sum() < min_instance_points:
                continue
            candidates.append(
                (float(scores[mask_idx]), block_idx, mask_idx, scene_mask, region)
            )

    # descending confidence; deterministic tie-break on (block, mask) order
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    inst_points: list[np.ndarray] = []
    inst_region: list[np.ndarray] = []
    inst_conf: list[float] = []
    for score, _bi, _mi, scene_mask, region in candidates:
        merged = False
        for g in range(len(inst_points)):
            shared = region & inst_region[g]
            union = np.count_nonzero((scene_mask | inst_points[g]) & shared)
            if union == 0:
                continue
            inter = np.count_nonzero(scene_mask & inst_points[g] & shared)
            if inter / union > merge_iou:
                inst_points[g] = inst_points[g] | scene_mask
                inst_region[g] = inst_region[g] | region
                inst_conf[g] = max(inst_conf[g], score)
                merged = True
                break
        if not merged:
            inst_points.append(scene_mask.copy())
            inst_region.append(region.copy())
            inst_conf.append(score)

    # resolve contested points to the higher-confidence claimant, ties to
    # the lower instance id; instance order is already confidence-descending
    ids = np.full(n_scene_points, -1, dtype=np.int64)
    claimed = np.zeros(n_scene_points, dtype=bool)
    for g, points in enumerate(inst_points):
        take = points & ~claimed
        ids[take] = g
        claimed |= points

    # compact ids, dropping instances that lost all their points
    survivors = [g for g in range(len(inst_points)) if np.any(ids == g)]
    remap = {g: new for new, g in enumerate(survivors)}
    out = np.full(n_scene_points, -1, dtype=np.int64)
    for g, new in remap.items():
        out[ids == g] = new
    conf = np.asarray([inst_conf[g] for g in survivors], dtype=np.float64)
    return SceneSegmentation(instance_ids=out, confidences=conf)
