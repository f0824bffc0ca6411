"""Shared domain types, configuration, deterministic RNG and dense-matrix primitives."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when matrix/array dimensions do not agree."""


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream from a 64-bit seed.

    Backed by PCG64, a fixed, documented algorithm: identical seeds yield
    identical streams across runs and platforms.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense matrix product with double precision accumulation.

    Raises ShapeError naming both shapes when the inner dimensions disagree.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def logistic(x: np.ndarray) -> np.ndarray:
    """Numerically stable elementwise logistic sigmoid."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class PointCloud:
    """N points with I channels each; first three channels are XYZ in meters.

    The default 9-channel layout is XYZ, RGB in [0,1] and the room-normalized
    XYZ location in [0,1]. `instance_labels`, when present, assigns each point
    an integer instance id (-1 = unlabeled).
    """

    channels: np.ndarray
    instance_labels: np.ndarray | None = None

    def __post_init__(self):
        channels = np.ascontiguousarray(self.channels, dtype=np.float64)
        if channels.ndim != 2:
            raise ShapeError(f"channels must be N x I, got shape {channels.shape}")
        n, i = channels.shape
        if n < 1:
            raise ValueError("point cloud must contain at least one point")
        if i < 3:
            raise ShapeError(f"need at least XYZ channels, got I={i}")
        if i == 9:
            tail = channels[:, 3:]
            if tail.min() < -1e-9 or tail.max() > 1.0 + 1e-9:
                raise ValueError("RGB and normalized-location channels must lie in [0,1]")
        object.__setattr__(self, "channels", channels)
        if self.instance_labels is not None:
            labels = np.ascontiguousarray(self.instance_labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ShapeError(
                    f"instance_labels must have exactly {n} entries, got shape {labels.shape}"
                )
            object.__setattr__(self, "instance_labels", labels)

    @property
    def n_points(self) -> int:
        return self.channels.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    @property
    def positions(self) -> np.ndarray:
        """N x 3 view of the XYZ columns, in meters."""
        return self.channels[:, :3]


@dataclass(frozen=True)
class SampledSet:
    """K pairwise-distinct point indices into a parent cloud, with their coordinates."""

    indices: np.ndarray
    coordinates: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        coords = np.ascontiguousarray(self.coordinates, dtype=np.float64)
        if indices.ndim != 1:
            raise ShapeError(f"indices must be 1-D, got shape {indices.shape}")
        if coords.shape != (indices.shape[0], 3):
            raise ShapeError(
                f"coordinates must be K x 3 matching {indices.shape[0]} indices, got {coords.shape}"
            )
        if len(np.unique(indices)) != len(indices):
            raise ValueError("sampled indices must be pairwise distinct")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "coordinates", coords)

    @classmethod
    def from_cloud(cls, cloud: PointCloud, indices: np.ndarray) -> "SampledSet":
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= cloud.n_points):
            raise IndexError(f"sample index out of range for cloud of {cloud.n_points} points")
        return cls(indices=indices, coordinates=cloud.positions[indices])

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class PrototypeMatrix:
    """N x M per-point scores; column i is one full-length prototype."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"prototype matrix must be N x M, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_prototypes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CoefficientMatrix:
    """K x M mixing weights; tanh-headed entries lie strictly inside (-1, 1)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"coefficient matrix must be K x M, got shape {values.shape}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MaskSet:
    """K overcomplete mask rows (logits + probabilities) and the kept subset."""

    logits: np.ndarray
    probabilities: np.ndarray
    scores: np.ndarray
    kept: np.ndarray

    def __post_init__(self):
        logits = np.ascontiguousarray(self.logits, dtype=np.float64)
        probs = np.ascontiguousarray(self.probabilities, dtype=np.float64)
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        kept = np.ascontiguousarray(self.kept, dtype=np.int64)
        if probs.shape != logits.shape:
            raise ShapeError(f"probabilities shape {probs.shape} != logits shape {logits.shape}")
        k = logits.shape[0]
        if scores.shape != (k,):
            raise ShapeError(f"scores must have one entry per mask row, got {scores.shape}")
        if kept.size and (kept.min() < 0 or kept.max() >= k):
            raise ValueError("kept indices out of range")
        if len(np.unique(kept)) != len(kept):
            raise ValueError("kept indices must be pairwise distinct")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "kept", kept)


@dataclass(frozen=True)
class Config:
    """Pipeline hyperparameters; defaults follow the reference operating point."""

    n_features: int = 64
    n_prototypes: int = 128
    n_samples: int = 64
    sampling_mode: str = "fps-xyz"
    mask_threshold: float = 0.3
    nms_iou: float = 0.5
    block_size: float = 1.0
    stride: float = 0.5
    points_per_block: int = 4096
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 65
    seed: int = 0
    # artifact knobs beyond the headline hyperparameters
    n_channels: int = 9
    k_neighbors: int = 16
    min_instance_points: int = 10
    merge_iou: float = 0.5
    extractor_hidden: tuple = (32, 64)
    head_hidden: int = 128
    n_crops: int = 1

    def __post_init__(self):
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError("mask_threshold must lie in (0, 1)")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must lie in (0, 1)")
        if self.stride > self.block_size:
            raise ValueError("stride must not exceed block_size")
        if self.n_samples > self.points_per_block:
            raise ValueError("n_samples must not exceed points_per_block")
        if self.sampling_mode != "fps-xyz":
            raise ValueError(f"unsupported sampling_mode {self.sampling_mode!r}")
        if self.n_crops < 1:
            raise ValueError("n_crops must be >= 1")

    def replace(self, **overrides) -> "Config":
        return dataclasses.replace(self, **overrides)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "Config":
        """Build a Config from string-keyed values, coercing types per field."""
        coerced = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in mapping.items():
            if key not in fields:
                raise KeyError(f"unknown config key {key!r}")
            coerced[key] = _coerce(fields[key], value)
        return cls(**coerced)


def config_to_text(config: Config) -> str:
    """Serialize a Config as line-based `key = value` ASCII."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict:
    """Parse line-based `key = value` ASCII; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(f: dataclasses.Field, value):
    if not isinstance(value, str):
        return value
    name = f.name
    if name == "sampling_mode":
        return value
    if name == "extractor_hidden":
        return tuple(int(v) for v in value.replace(",", " ").split())
    default = f.default
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value
