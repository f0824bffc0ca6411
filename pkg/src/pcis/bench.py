"""Latency benchmark harness: per-stage monotonic-clock timing with warmup,
reporting mean/std (plus median and p99 for timer-noise diagnosis)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .blocking import Block, block_merge, model_view
from .core import Config
from .heads import ModelParams, Network
from .pipeline import assemble_masks, logit_cutoff, nms, threshold_masks
from .sampling import sample_points

STAGE_ORDER = ("network", "nms", "grouping", "total")


@dataclass(frozen=True)
class StageTiming:
    mean_ms: float
    std_ms: float
    median_ms: float
    p99_ms: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("a timed stage needs at least 2 samples")
        if self.std_ms < 0.0:
            raise ValueError("negative std")


@dataclass(frozen=True)
class TimingReport:
    """Stage name -> timing; `grouping` is None when the pipeline has no
    separate grouping step (rendered as "/")."""

    stages: dict
    warmup: int
    checksum: float


def summarize(samples_ns: np.ndarray) -> StageTiming:
    """Collapse raw per-repetition nanosecond samples into a StageTiming."""
    ms = np.asarray(samples_ns, dtype=np.float64) / 1e6
    if ms.size < 2:
        raise ValueError("need at least 2 samples")
    return StageTiming(
        mean_ms=float(ms.mean()),
        std_ms=float(ms.std(ddof=1)),
        median_ms=float(np.median(ms)),
        p99_ms=float(np.percentile(ms, 99)),
        count=int(ms.size),
    )


def time_callable(fn, repetitions: int = 100, warmup: int = 10) -> StageTiming:
    """Time fn() repetitions times after warmup uncounted calls."""
    if repetitions < 2:
        raise ValueError("repetitions must be >= 2")
    for _ in range(warmup):
        fn()
    samples = np.empty(repetitions, dtype=np.int64)
    for r in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        samples[r] = time.perf_counter_ns() - t0
    return summarize(samples)


def benchmark(
    params: ModelParams,
    blocks: list[Block],
    config: Config,
    repetitions: int = 100,
    warmup: int = 10,
    time_grouping: bool = False,
) -> TimingReport:
    """Per-stage inference timing over all blocks.

    One repetition runs every block through the network stage (features,
    sampling, heads, mask assembly) then the NMS stage (threshold + NMS);
    each stage's time is summed over blocks into one sample. `total` is
    measured independently as the whole repetition. Warmup repetitions are
    discarded. Outputs feed a checksum so the work cannot be skipped.
    """
    if not blocks:
        raise ValueError("benchmark needs at least one block")
    if repetitions < 2:
        raise ValueError("repetitions must be >= 2")
    net = Network(params, k_neighbors=config.k_neighbors)
    sink = 0.0

    def one_rep():
        nonlocal sink
        t_rep = time.perf_counter_ns()
        net_ns = 0
        nms_ns = 0
        grp_ns = 0
        merged_inputs = []
        for block in blocks:
            t0 = time.perf_counter_ns()
            view = model_view(block)
            k = min(config.n_samples, view.n_points)
            samples = sample_points(view, k, start_index=0)
            _f, protos, coeffs = net.forward(view, samples)
            logits = assemble_masks(coeffs, protos)
            t1 = time.perf_counter_ns()
            masks, scores = threshold_masks(logits, config.mask_threshold)
            kept = nms(masks, scores, config.nms_iou, config.min_instance_points)
            t2 = time.perf_counter_ns()
            net_ns += t1 - t0
            nms_ns += t2 - t1
            sink += float(len(kept)) + float(logits[0, 0])
            if time_grouping:
                merged_inputs.append((block, masks[kept], scores[kept]))
        if time_grouping:
            n_scene = max(int(b.point_indices.max()) for b in blocks) + 1
            t3 = time.perf_counter_ns()
            seg = block_merge(
                merged_inputs, n_scene, config.merge_iou, config.min_instance_points
            )
            grp_ns = time.perf_counter_ns() - t3
            sink += float(seg.n_instances)
        total_ns = time.perf_counter_ns() - t_rep
        return net_ns, nms_ns, grp_ns, total_ns

    for _ in range(warmup):
        one_rep()
    raw = np.empty((repetitions, 4), dtype=np.int64)
    for r in range(repetitions):
        raw[r] = one_rep()
    stages = {
        "network": summarize(raw[:, 0]),
        "nms": summarize(raw[:, 1]),
        "grouping": summarize(raw[:, 2]) if time_grouping else None,
        "total": summarize(raw[:, 3]),
    }
    return TimingReport(stages=stages, warmup=warmup, checksum=sink)


def benchmark_kernels(
    n_points: int = 4096,
    n_samples: int = 64,
    n_prototypes: int = 128,
    repetitions: int = 100,
    warmup: int = 10,
    seed: int = 0,
) -> dict:
    """Time the assemble+threshold+NMS hot path on each available kernel
    backend with identical synthetic inputs. Returns backend -> StageTiming."""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((n_samples, n_prototypes))
    protos = rng.standard_normal((n_prototypes, n_points))
    cutoff = logit_cutoff(0.3)
    out = {}
    for name in kernels.available_backends():
        impl = kernels.get_backend(name)

        def workload(impl=impl):
            logits = coeffs @ protos  # K x N
            masks, scores = impl.threshold_masks(np.ascontiguousarray(logits), cutoff)
            impl.nms_keep(masks, scores, 0.5, 10)

        out[name] = time_callable(workload, repetitions, warmup)
    return out


def timing_table(report: TimingReport) -> str:
    """Aligned ASCII table with the four timing columns; untimed grouping
    renders as "/". Cells are mean +/- std in ms."""
    cells = []
    for name in STAGE_ORDER:
        st = report.stages.get(name)
        cells.append("/" if st is None else f"{st.mean_ms:.3f} +/- {st.std_ms:.3f}")
    header = f"{'Network':>20} {'NMS':>20} {'Grouping':>20} {'Total':>20}"
    row = " ".join(f"{c:>20}" for c in cells)
    return header + "\n" + row + "\n"
