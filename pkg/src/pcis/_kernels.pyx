# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: farthest point sampling, mask thresholding, mask NMS.

Mirrors pcis._kernels_np exactly: same distance arithmetic and tie-breaking,
so both backends return identical indices and identical mask bits.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()

BACKEND = "cython"


def fps(positions, int k, int start):
    """Greedy farthest point sampling; ties break to the lowest index."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] pos = \
        np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = pos.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] selected = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n, dtype=np.float64)
    cdef double px, py, pz, dx, dy, dz, d, best
    cdef Py_ssize_t i, j, nxt

    px = pos[start, 0]
    py = pos[start, 1]
    pz = pos[start, 2]
    for i in range(n):
        dx = pos[i, 0] - px
        dy = pos[i, 1] - py
        dz = pos[i, 2] - pz
        dist[i] = dx * dx + dy * dy + dz * dz
    dist[start] = -INFINITY
    selected[0] = start

    for j in range(1, k):
        nxt = 0
        best = dist[0]
        for i in range(1, n):
            if dist[i] > best:
                best = dist[i]
                nxt = i
        selected[j] = nxt
        px = pos[nxt, 0]
        py = pos[nxt, 1]
        pz = pos[nxt, 2]
        for i in range(n):
            dx = pos[i, 0] - px
            dy = pos[i, 1] - py
            dz = pos[i, 2] - pz
            d = dx * dx + dy * dy + dz * dz
            if d < dist[i]:
                dist[i] = d
        dist[nxt] = -INFINITY
    return selected


def threshold_masks(logits, double cutoff):
    """Binarize mask logits at a logit-space cutoff and score each row."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] z = \
        np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t k = z.shape[0]
    cdef Py_ssize_t n = z.shape[1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] masks = np.zeros((k, n), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scores = np.zeros(k, dtype=np.float64)
    cdef Py_ssize_t row, col
    cdef double acc, v, ex
    cdef Py_ssize_t count

    for row in range(k):
        acc = 0.0
        count = 0
        for col in range(n):
            v = z[row, col]
            if v >= cutoff:
                masks[row, col] = 1
                count += 1
                if v >= 0.0:
                    acc += 1.0 / (1.0 + exp(-v))
                else:
                    ex = exp(v)
                    acc += ex / (1.0 + ex)
        if count > 0:
            scores[row] = acc / count
    return masks, scores


def nms_keep(masks, scores, double iou_threshold, int min_points):
    """Greedy mask NMS, score descending, ties to the lower row index."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] m = \
        np.ascontiguousarray(masks, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = \
        np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t k = m.shape[0]
    cdef Py_ssize_t n = m.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sizes = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kept = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t i, j, col, idx, other, n_kept, floor
    cdef long long inter, union_
    cdef bint ok

    floor = min_points if min_points > 1 else 1
    for i in range(k):
        inter = 0
        for col in range(n):
            if m[i, col]:
                inter += 1
        sizes[i] = inter

    # insertion sort by (score desc, index asc); k is small
    for i in range(k):
        order[i] = i
    for i in range(1, k):
        idx = order[i]
        j = i - 1
        while j >= 0 and s[order[j]] < s[idx]:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = idx

    n_kept = 0
    for i in range(k):
        idx = order[i]
        if sizes[idx] < floor:
            continue
        ok = True
        for j in range(n_kept):
            other = kept[j]
            inter = 0
            for col in range(n):
                if m[idx, col] and m[other, col]:
                    inter += 1
            union_ = sizes[idx] + sizes[other] - inter
            # same float comparison as the numpy backend, bit for bit
            if union_ > 0 and (<double>inter) / (<double>union_) > iou_threshold:
                ok = False
                break
        if ok:
            kept[n_kept] = idx
            n_kept += 1
    return kept[:n_kept].copy()
