"""Mask assembly from coefficients and prototypes, the spatially constrained
BCE loss, Adam training, and threshold -> NMS inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blocking import Block, model_view
from .core import Config, MaskSet, ShapeError, logistic, seeded_rng
from .heads import (
    ModelParams,
    Network,
    TrainingError,
    init_params,
    params_to_vector,
    vector_to_params,
)
from .sampling import ground_truth_at, sample_points

_PROB_CLAMP = 1e-7


def assemble_masks(coefficients: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Mask logits as the linear combination of prototypes.

    Row k mixes the M prototype columns with sample k's coefficients:
    logits = coefficients @ prototypes.T, shape K x N.
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if coefficients.ndim != 2 or prototypes.ndim != 2:
        raise ShapeError(
            f"expected 2-D coefficient and prototype matrices,"
            f" got {coefficients.shape} and {prototypes.shape}"
        )
    if coefficients.shape[1] != prototypes.shape[1]:
        raise ShapeError(
            f"prototype-count mismatch: coefficients {coefficients.shape}"
            f" vs prototypes {prototypes.shape}"
        )
    return coefficients @ prototypes.T


def loss_and_gradients(
    logits: np.ndarray, gt_rows: np.ndarray, valid: np.ndarray
) -> tuple[float, np.ndarray]:
    """Spatially constrained BCE loss and its gradient wrt the logits.

    J sums, over valid sample rows, the mean-over-N binary cross entropy
    between logistic(logits) and the ground-truth row. Probabilities are
    clamped to [1e-7, 1 - 1e-7]; invalid rows contribute nothing. The
    gradient is (p - y) / N per valid row.
    """
    logits = np.asarray(logits, dtype=np.float64)
    gt_rows = np.asarray(gt_rows, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if logits.shape != gt_rows.shape:
        raise ShapeError(f"logits {logits.shape} and gt rows {gt_rows.shape} disagree")
    k, n = logits.shape
    probs = np.clip(logistic(logits), _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    per_element = -(gt_rows * np.log(probs) + (1.0 - gt_rows) * np.log(1.0 - probs))
    loss = float(per_element[valid].sum() / n) if valid.any() else 0.0
    grad = np.where(valid[:, None], (probs - gt_rows) / n, 0.0)
    return loss, grad


@dataclass
class TrainState:
    """Adam state: parameters, first/second moments, step count, loss history."""

    params: ModelParams
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    loss_history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        size = params_to_vector(params).size
        return cls(params=params, m=np.zeros(size), v=np.zeros(size))


def adam_step(
    state: TrainState,
    grads: ModelParams,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """One bias-corrected Adam update; raises TrainingError naming the layer
    when gradients are non-finite."""
    for name, layer in grads.named_layers():
        if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
            raise TrainingError(f"non-finite gradient in layer {name}")
    g = params_to_vector(grads)
    theta = params_to_vector(state.params)
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return TrainState(
        params=vector_to_params(theta, state.params),
        m=m,
        v=v,
        step=t,
        loss_history=state.loss_history,
    )


def block_loss(params: ModelParams, block: Block, config: Config, start_index: int):
    """Forward pass and loss for one labeled block.

    Returns (loss, gradients) with gradients averaged nowhere -- raw sums
    for this single block.
    """
    if block.cloud.instance_labels is None:
        raise ValueError("training blocks must carry instance labels")
    net = Network(params, k_neighbors=config.k_neighbors)
    view = model_view(block)
    k = min(config.n_samples, view.n_points)
    samples = sample_points(view, k, start_index)
    gt_rows, valid = ground_truth_at(samples, view.instance_labels)
    _feats, protos, coeffs = net.forward(view, samples)
    logits = assemble_masks(coeffs, protos)
    loss, d_logits = loss_and_gradients(logits, gt_rows, valid)
    d_coeffs = d_logits @ protos
    d_protos = d_logits.T @ coeffs
    grads = net.backward(d_protos, d_coeffs)
    return loss, grads


def train(
    blocks: list[Block], config: Config, initial: ModelParams | None = None
) -> tuple[ModelParams, list[float]]:
    """Train on labeled blocks: seeded shuffling, mini-batches, Adam.

    Per step the batch loss is the mean of per-block losses; gradients are
    averaged accordingly. Returns final parameters and the per-epoch mean
    loss curve.
    """
    if not blocks:
        raise ValueError("training requires at least one block")
    rng = seeded_rng(config.seed)
    params = initial if initial is not None else init_params(config, rng)
    state = TrainState.fresh(params)
    for _epoch in range(config.epochs):
        order = rng.permutation(len(blocks))
        epoch_losses = []
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            batch_loss = 0.0
            grad_vec = None
            for block_idx in batch:
                block = blocks[int(block_idx)]
                start = int(rng.integers(block.cloud.n_points))
                loss, grads = block_loss(state.params, block, config, start)
                batch_loss += loss
                vec = params_to_vector(grads)
                grad_vec = vec if grad_vec is None else grad_vec + vec
            scale = 1.0 / len(batch)
            batch_loss *= scale
            mean_grads = vector_to_params(grad_vec * scale, state.params)
            state = adam_step(state, mean_grads, lr=config.lr)
            epoch_losses.append(batch_loss)
        state.loss_history.append(float(np.mean(epoch_losses)))
    return state.params, state.loss_history


def logit_cutoff(threshold: float) -> float:
    """Probability threshold expressed in logit space: ln(t / (1-t))."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return math.log(threshold / (1.0 - threshold))


def threshold_masks(logits: np.ndarray, threshold: float = 0.3):
    """Binarize mask logits at a probability threshold.

    mask = logistic(logit) >= threshold, decided in logit space; the score
    of a mask is its mean foreground probability over the support (0 when
    empty). Returns (masks K x N bool, scores K).
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    masks, scores = kernels.threshold_masks(logits, logit_cutoff(threshold))
    return masks.astype(bool), scores


def nms(
    masks: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float = 0.5,
    min_instance_points: int = 10,
) -> np.ndarray:
    """Greedy score-ordered mask NMS.

    Empty masks and masks smaller than `min_instance_points` are dropped
    first; a mask is kept iff its IoU with every already-kept mask stays at
    or below `iou_threshold`. Score ties break to the lower sample index.
    Returns the kept indices in keep order.
    """
    masks = np.asarray(masks)
    scores = np.asarray(scores, dtype=np.float64)
    if masks.ndim != 2 or masks.shape[0] != scores.shape[0]:
        raise ShapeError(f"masks {masks.shape} and scores {scores.shape} disagree")
    if not np.isfinite(scores).all():
        raise ValueError("NMS scores must be finite")
    return kernels.nms_keep(
        np.ascontiguousarray(masks, dtype=np.uint8), scores, iou_threshold, min_instance_points
    )


@dataclass(frozen=True)
class InstancePrediction:
    """One kept mask: boolean support, confidence score, source sample index."""

    mask: np.ndarray
    score: float
    source_sample: int


def predict_masks(params: ModelParams, block: Block, config: Config) -> MaskSet:
    """Run the network on a block and assemble the overcomplete mask set."""
    net = Network(params, k_neighbors=config.k_neighbors)
    view = model_view(block)
    k = min(config.n_samples, view.n_points)
    samples = sample_points(view, k, start_index=0)
    _feats, protos, coeffs = net.forward(view, samples)
    logits = assemble_masks(coeffs, protos)
    masks, scores = threshold_masks(logits, config.mask_threshold)
    kept = nms(masks, scores, config.nms_iou, config.min_instance_points)
    return MaskSet(logits=logits, probabilities=logistic(logits), scores=scores, kept=kept)


def infer_block(params: ModelParams, block: Block, config: Config) -> list[InstancePrediction]:
    """extract -> FPS -> heads -> assemble -> threshold -> NMS for one block."""
    mask_set = predict_masks(params, block, config)
    cutoff = logit_cutoff(config.mask_threshold)
    out = []
    for idx in mask_set.kept:
        mask = mask_set.logits[idx] >= cutoff
        out.append(
            InstancePrediction(
                mask=mask, score=float(mask_set.scores[idx]), source_sample=int(idx)
            )
        )
    return out


def dump_predictions(path, predictions: list, scene_indices: list) -> None:
    """ASCII prediction dump: one line per kept instance, score then the
    scene point indices of its support."""
    with open(path, "w") as fh:
        for pred, indices in zip(predictions, scene_indices):
            cells = [f"{pred.score:.6f}"] + [str(int(i)) for i in indices]
            fh.write(" ".join(cells) + "\n")


def load_predictions(path, n_scene_points: int):
    """Read a prediction dump back as (masks list, scores list)."""
    masks, scores = [], []
    with open(path) as fh:
        for line in fh:
            cells = line.split()
            if not cells:
                continue
            scores.append(float(cells[0]))
            mask = np.zeros(n_scene_points, dtype=bool)
            idx = np.asarray([int(c) for c in cells[1:]], dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n_scene_points):
                raise ValueError(f"{path}: point index out of range")
            mask[idx] = True
            masks.append(mask)
    return masks, scores
