"""Farthest point sampling of query points and their ground-truth mask rows."""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import PointCloud, SampledSet, ShapeError


def farthest_point_sample(positions: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy FPS on xyz: k point indices, first one = start_index.

    Each subsequent selection maximizes the minimum Euclidean distance to
    the already-selected set; distance ties break to the lowest index.
    The exact O(N*K) algorithm is used, no grid approximation.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeError(f"positions must be N x 3, got shape {positions.shape}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k} for N={n}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range for N={n}")
    return kernels.fps(positions, int(k), int(start_index))


def sample_points(cloud: PointCloud, k: int, start_index: int = 0) -> SampledSet:
    """FPS over a cloud's xyz positions, wrapped as a SampledSet."""
    indices = farthest_point_sample(cloud.positions, k, start_index)
    return SampledSet.from_cloud(cloud, indices)


def ground_truth_at(samples: SampledSet, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth mask row per sampled point.

    Row j indicates, over all N points, the instance containing sample j.
    Samples landing on unlabeled points (-1) get an all-zero row flagged
    invalid; invalid rows are excluded from the loss.

    Returns (rows K x N float64 in {0,1}, valid K bool).
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = len(samples)
    n = labels.shape[0]
    rows = np.zeros((k, n), dtype=np.float64)
    valid = np.zeros(k, dtype=bool)
    for j, idx in enumerate(samples.indices):
        label = labels[idx]
        if label < 0:
            continue
        rows[j] = labels == label
        valid[j] = True
    return rows, valid
