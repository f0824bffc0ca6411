"""Class-agnostic instance segmentation metrics: coverage (plain and
size-weighted), precision and recall at IoU 0.5 with greedy one-to-one
matching, aggregated over scenes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask length mismatch: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def coverage(gt_instances: list, predictions: list) -> tuple[float, float]:
    """Mean and size-weighted mean, over ground-truth instances, of the best
    prediction IoU. Requires at least one ground-truth instance; an empty
    prediction list scores 0."""
    if not gt_instances:
        raise ValueError("coverage needs at least one ground-truth instance")
    best = []
    sizes = []
    for gt in gt_instances:
        gt = np.asarray(gt, dtype=bool)
        sizes.append(int(np.count_nonzero(gt)))
        best.append(max((iou(gt, p) for p in predictions), default=0.0))
    best_arr = np.asarray(best, dtype=np.float64)
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    m_cov = float(best_arr.mean())
    total = sizes_arr.sum()
    m_wcov = float((sizes_arr / total) @ best_arr) if total > 0 else 0.0
    return m_cov, m_wcov


def precision_recall(
    gt_instances: list,
    predictions: list,
    scores: list | None = None,
    iou_thresh: float = 0.5,
) -> tuple[float, float, int]:
    """Precision and recall with greedy one-to-one gt claiming.

    Predictions are visited in descending score (ties to the earlier
    prediction); each claims its best-IoU ground-truth instance iff that
    IoU >= iou_thresh and the instance is unclaimed. Returns
    (precision, recall, n_matched); either metric is 0 when its
    denominator is.
    """
    n_pred = len(predictions)
    n_gt = len(gt_instances)
    if scores is None:
        order = range(n_pred)
    else:
        if len(scores) != n_pred:
            raise ShapeError(f"{n_pred} predictions but {len(scores)} scores")
        order = np.lexsort((np.arange(n_pred), -np.asarray(scores, dtype=np.float64)))
    claimed = [False] * n_gt
    tp = 0
    for p_idx in order:
        pred = predictions[int(p_idx)]
        best_iou, best_g = 0.0, -1
        for g, gt in enumerate(gt_instances):
            v = iou(gt, pred)
            if v > best_iou:
                best_iou, best_g = v, g
        if best_g >= 0 and best_iou >= iou_thresh and not claimed[best_g]:
            claimed[best_g] = True
            tp += 1
    m_prec = tp / n_pred if n_pred else 0.0
    m_rec = tp / n_gt if n_gt else 0.0
    return m_prec, m_rec, tp


@dataclass(frozen=True)
class SceneEval:
    """Per-scene metric row."""

    m_cov: float
    m_wcov: float
    m_prec: float
    m_rec: float
    n_gt: int
    n_pred: int
    n_matched: int


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics (mean over scenes) plus the per-scene breakdown."""

    m_cov: float
    m_wcov: float
    m_prec: float
    m_rec: float
    n_gt: int
    n_pred: int
    n_matched: int
    scenes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("m_cov", "m_wcov", "m_prec", "m_rec"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.n_matched > min(self.n_gt, self.n_pred):
            raise ValueError("matched count exceeds min(n_gt, n_pred)")


def evaluate_scene(
    gt_instances: list, predictions: list, scores: list | None = None, iou_thresh: float = 0.5
) -> SceneEval:
    m_cov, m_wcov = coverage(gt_instances, predictions)
    m_prec, m_rec, tp = precision_recall(gt_instances, predictions, scores, iou_thresh)
    return SceneEval(
        m_cov=m_cov,
        m_wcov=m_wcov,
        m_prec=m_prec,
        m_rec=m_rec,
        n_gt=len(gt_instances),
        n_pred=len(predictions),
        n_matched=tp,
    )


def evaluate(scene_rows: list) -> EvalReport:
    """Aggregate per-scene evaluations: unweighted mean of each metric."""
    if not scene_rows:
        raise ValueError("evaluate needs at least one scene")
    return EvalReport(
        m_cov=float(np.mean([s.m_cov for s in scene_rows])),
        m_wcov=float(np.mean([s.m_wcov for s in scene_rows])),
        m_prec=float(np.mean([s.m_prec for s in scene_rows])),
        m_rec=float(np.mean([s.m_rec for s in scene_rows])),
        n_gt=sum(s.n_gt for s in scene_rows),
        n_pred=sum(s.n_pred for s in scene_rows),
        n_matched=sum(s.n_matched for s in scene_rows),
        scenes=tuple(scene_rows),
    )


def report_table(report: EvalReport) -> str:
    """Aligned ASCII table, one aggregate row: mCov mWCov mRec mPrec."""
    header = f"{'mCov':>8} {'mWCov':>8} {'mRec':>8} {'mPrec':>8}"
    row = (
        f"{report.m_cov:8.3f} {report.m_wcov:8.3f}"
        f" {report.m_rec:8.3f} {report.m_prec:8.3f}"
    )
    return header + "\n" + row + "\n"
