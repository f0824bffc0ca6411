"""Pure numpy implementations of the hot kernels.

Fallback backend used when the compiled `pcis._kernels` extension is not
available. Both backends implement the same contracts: identical index
outputs for fps/nms, mask bits decided by the same logit-cutoff comparison,
scores equal up to summation-order rounding.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def fps(positions: np.ndarray, k: int, start: int) -> np.ndarray:
    """Greedy farthest point sampling over squared Euclidean distances.

    Each selection maximizes the minimum distance to the already-selected
    set; ties break to the lowest index. Returns k point indices.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[0]
    selected = np.empty(k, dtype=np.int64)
    selected[0] = start
    # running min squared distance to the selected set; -inf marks selected
    dx = positions[:, 0] - positions[start, 0]
    dy = positions[:, 1] - positions[start, 1]
    dz = positions[:, 2] - positions[start, 2]
    dist = dx * dx + dy * dy + dz * dz
    dist[start] = -np.inf
    for j in range(1, k):
        nxt = int(np.argmax(dist))
        selected[j] = nxt
        dx = positions[:, 0] - positions[nxt, 0]
        dy = positions[:, 1] - positions[nxt, 1]
        dz = positions[:, 2] - positions[nxt, 2]
        cand = dx * dx + dy * dy + dz * dz
        np.minimum(dist, cand, out=dist)
        dist[nxt] = -np.inf
    return selected


def threshold_masks(logits: np.ndarray, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Binarize mask logits at a logit-space cutoff and score each row.

    A point belongs to mask k iff logits[k, n] >= cutoff. The score of a row
    is the mean foreground probability over its support (0 for empty rows).
    Returns (masks uint8 K x N, scores K).
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    masks = (logits >= cutoff).astype(np.uint8)
    k = logits.shape[0]
    scores = np.zeros(k, dtype=np.float64)
    for row in range(k):
        support = masks[row].astype(bool)
        if support.any():
            scores[row] = _sigmoid(logits[row, support]).mean()
    return masks, scores


def nms_keep(
    masks: np.ndarray, scores: np.ndarray, iou_threshold: float, min_points: int
) -> np.ndarray:
    """Greedy mask NMS: keep score-descending, suppress IoU > threshold.

    Rows with fewer than max(min_points, 1) set bits are dropped before the
    greedy pass. Score ties break to the lower row index.
    """
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    scores = np.asarray(scores, dtype=np.float64)
    k = masks.shape[0]
    sizes = masks.sum(axis=1, dtype=np.int64)
    alive = sizes >= max(int(min_points), 1)
    order = np.lexsort((np.arange(k), -scores))
    kept: list[int] = []
    bool_masks = masks.astype(bool)
    for idx in order:
        if not alive[idx]:
            continue
        ok = True
        for kept_idx in kept:
            inter = np.count_nonzero(bool_masks[idx] & bool_masks[kept_idx])
            union = sizes[idx] + sizes[kept_idx] - inter
            if union > 0 and inter / union > iou_threshold:
                ok = False
                break
        if ok:
            kept.append(int(idx))
    return np.asarray(kept, dtype=np.int64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
