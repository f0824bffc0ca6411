"""Scene file IO, synthetic labeled-scene generation and prototype dumps.

Binary scene format (little-endian): magic "PCIS", version u16, N u32,
I u32, has_labels u8, then N x I float32 row-major, then N int32 labels if
has_labels=1. ASCII fallback: one point per line, I floats plus one int
label when labels are present.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, PrototypeMatrix, ShapeError, seeded_rng

MAGIC = b"PCIS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_TEXT_BYTES = frozenset(b"\t\n\r") | frozenset(range(0x20, 0x7F))


class ParseError(ValueError):
    """Base class for scene-file parse failures."""


class BadMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    pass


class InvalidValueError(ParseError):
    """Payload contains NaN or non-finite values."""


class GenerationError(ValueError):
    """Synthetic instances cannot be placed inside the room."""


def save_scene(path, cloud: PointCloud, fmt: str = "binary") -> None:
    """Write a cloud to `path` in the binary format or its ASCII fallback."""
    if fmt == "binary":
        _save_binary(path, cloud)
    elif fmt == "ascii":
        _save_ascii(path, cloud)
    else:
        raise ValueError(f"unknown scene format {fmt!r}")


def load_scene(path, n_channels: int = 9) -> PointCloud:
    """Load a scene file, auto-detecting binary vs ASCII by the magic bytes.

    `n_channels` disambiguates the label column for ASCII files (the binary
    header is self-describing).
    """
    with open(path, "rb") as fh:
        head = fh.read(256)
    if head[:4] == MAGIC:
        return _load_binary(path)
    if head and not all(b in _TEXT_BYTES for b in head):
        raise BadMagicError(f"{path}: bad magic {head[:4]!r} and not ASCII text")
    return _load_ascii(path, n_channels)


def _save_binary(path, cloud: PointCloud) -> None:
    n, i = cloud.channels.shape
    has_labels = cloud.instance_labels is not None
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, i, 1 if has_labels else 0))
        fh.write(np.ascontiguousarray(cloud.channels, dtype="<f4").tobytes())
        if has_labels:
            fh.write(np.ascontiguousarray(cloud.instance_labels, dtype="<i4").tobytes())


def _load_binary(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, version, n, i, has_labels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if n < 1:
        raise InvalidValueError(f"{path}: header declares N={n}, need N >= 1")
    expected = _HEADER.size + 4 * n * i + (4 * n if has_labels else 0)
    if len(data) != expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = _HEADER.size
    channels = np.frombuffer(data, dtype="<f4", count=n * i, offset=offset)
    channels = channels.reshape(n, i).astype(np.float64)
    if not np.isfinite(channels).all():
        raise InvalidValueError(f"{path}: payload contains non-finite values")
    labels = None
    if has_labels:
        offset += 4 * n * i
        labels = np.frombuffer(data, dtype="<i4", count=n, offset=offset).astype(np.int64)
    return PointCloud(channels=channels, instance_labels=labels)


def _save_ascii(path, cloud: PointCloud) -> None:
    # float32 values written with shortest round-trip reprs, so the ASCII
    # twin of a binary file loads to the identical cloud
    f32 = cloud.channels.astype(np.float32)
    labels = cloud.instance_labels
    with open(path, "w") as fh:
        for row in range(f32.shape[0]):
            cells = [np.format_float_positional(v, unique=True, trim="0") for v in f32[row]]
            if labels is not None:
                cells.append(str(int(labels[row])))
            fh.write(" ".join(cells) + "\n")


def _load_ascii(path, n_channels: int) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            cells = line.split()
            if len(cells) not in (n_channels, n_channels + 1):
                raise ParseError(
                    f"{path}:{lineno}: expected {n_channels} floats"
                    f" (+1 optional label), got {len(cells)} fields"
                )
            rows.append(cells)
    if not rows:
        raise TruncatedFileError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError(f"{path}: inconsistent column counts {sorted(widths)}")
    has_labels = widths.pop() == n_channels + 1
    try:
        channels = np.array(
            [[np.float32(c) for c in r[:n_channels]] for r in rows], dtype=np.float32
        ).astype(np.float64)
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64) if has_labels else None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not np.isfinite(channels).all():
        raise InvalidValueError(f"{path}: payload contains non-finite values")
    return PointCloud(channels=channels, instance_labels=labels)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for a desk-scale labeled room.

    Instances are coherent clusters (box / ellipsoid / plane patches) placed
    so that their surfaces stay at least max(min_separation, 3 * noise_sigma)
    apart; `instance_radius` bounds the per-axis half-extent draw.
    """

    room_extent: tuple = (2.0, 2.0, 1.0)
    n_instances: int = 5
    points_per_instance: tuple = (100, 200)
    shape_kinds: tuple = ("box", "ellipsoid", "plane")
    noise_sigma: float = 0.01
    seed: int = 0
    instance_radius: tuple = (0.1, 0.22)
    min_separation: float = 0.3

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.shape_kinds:
            raise ValueError("need at least one shape kind")
        unknown = set(self.shape_kinds) - {"box", "ellipsoid", "plane"}
        if unknown:
            raise ValueError(f"unknown shape kinds {sorted(unknown)}")


_PLACEMENT_ATTEMPTS = 2000


def generate_scene(spec: SyntheticSceneSpec) -> PointCloud:
    """Generate a labeled synthetic room per `spec`, deterministically.

    Channels follow the 9-D convention: XYZ in meters, RGB in [0,1] and the
    normalized room location in [0,1] (clipped where noise pushes a point
    past a wall). Every point carries exactly one instance id >= 0.
    """
    rng = seeded_rng(spec.seed)
    extent = np.asarray(spec.room_extent, dtype=np.float64)
    separation = max(spec.min_separation, 3.0 * spec.noise_sigma)
    margin = 3.0 * spec.noise_sigma

    centers: list[np.ndarray] = []
    radii: list[np.ndarray] = []
    bounding: list[float] = []
    for _ in range(spec.n_instances):
        placed = False
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            r = rng.uniform(spec.instance_radius[0], spec.instance_radius[1], size=3)
            lo = r + margin
            hi = extent - r - margin
            if np.any(hi <= lo):
                continue
            c = rng.uniform(lo, hi)
            rad = float(np.max(r))
            if all(
                np.linalg.norm(c - c2) >= rad + rad2 + separation
                for c2, rad2 in zip(centers, bounding)
            ):
                centers.append(c)
                radii.append(r)
                bounding.append(rad)
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place {spec.n_instances} instances in room {tuple(extent)}"
            )

    xyz_parts = []
    rgb_parts = []
    label_parts = []
    for label, (center, r) in enumerate(zip(centers, radii)):
        kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
        npts = int(rng.integers(spec.points_per_instance[0], spec.points_per_instance[1] + 1))
        pts = _shape_points(kind, r, npts, rng) + center
        if spec.noise_sigma > 0:
            pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
        base = rng.uniform(0.1, 0.9, size=3)
        rgb = np.clip(base + rng.normal(0.0, 0.02, size=(npts, 3)), 0.0, 1.0)
        xyz_parts.append(pts)
        rgb_parts.append(rgb)
        label_parts.append(np.full(npts, label, dtype=np.int64))

    xyz = np.concatenate(xyz_parts)
    rgb = np.concatenate(rgb_parts)
    labels = np.concatenate(label_parts)
    order = rng.permutation(len(xyz))
    xyz, rgb, labels = xyz[order], rgb[order], labels[order]
    norm = np.clip(xyz / extent, 0.0, 1.0)
    channels = np.concatenate([xyz, rgb, norm], axis=1)
    # round to storage precision so a generated cloud equals its saved copy
    channels = channels.astype(np.float32).astype(np.float64)
    return PointCloud(channels=channels, instance_labels=labels)


def _shape_points(kind: str, r: np.ndarray, npts: int, rng) -> np.ndarray:
    if kind == "box":
        return rng.uniform(-r, r, size=(npts, 3))
    if kind == "ellipsoid":
        v = rng.normal(size=(npts, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        u = rng.uniform(size=(npts, 1)) ** (1.0 / 3.0)
        return v * u * r
    # plane: a thin horizontal patch
    pts = rng.uniform(-r, r, size=(npts, 3))
    pts[:, 2] *= 0.02
    return pts


def dump_prototypes(cloud: PointCloud, prototypes: PrototypeMatrix, out_dir) -> list[str]:
    """Write one min-max normalized score file per prototype column.

    Each file holds "index score" lines with scores in [0,1], suitable for
    offline grayscale rendering; a constant column maps to all zeros.
    Returns the written paths.
    """
    values = np.asarray(getattr(prototypes, "values", prototypes), dtype=np.float64)
    if values.shape[0] != cloud.n_points:
        raise ShapeError(
            f"prototype rows ({values.shape[0]}) must match cloud points ({cloud.n_points})"
        )
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for m in range(values.shape[1]):
        col = values[:, m]
        span = col.max() - col.min()
        scores = (col - col.min()) / span if span > 0 else np.zeros_like(col)
        path = os.path.join(out_dir, f"prototype_{m:03d}.txt")
        with open(path, "w") as fh:
            for idx, s in enumerate(scores):
                fh.write(f"{idx} {s:.6f}\n")
        paths.append(path)
    return paths
