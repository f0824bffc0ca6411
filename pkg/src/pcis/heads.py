"""Minimal differentiable networks: shared feature extractor, prototype head,
and tanh coefficient head over sampled-point neighborhoods.

The reference backbones are replaced by small MLP stand-ins that keep the
tensor shapes (N x F features, N x M prototypes, K x M coefficients) and
the mechanism: per-point prototypes, local-neighborhood coefficients. All
forward passes are pure; backward passes are analytic and consume caches
from the matching forward call.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import Config, PointCloud, SampledSet, ShapeError, config_to_text, parse_key_values

# softening constant for inverse-distance neighbor weights
_IDW_DELTA = 1e-3


class StateError(RuntimeError):
    """Backward called without a cached forward pass."""


class TrainingError(RuntimeError):
    """Non-finite values encountered during training."""


@dataclass(frozen=True)
class LayerParams:
    """Dense layer: weight (fan_in x fan_out) and bias (fan_out)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ShapeError(f"inconsistent layer shapes {weight.shape} / {bias.shape}")
        if not (np.isfinite(weight).all() and np.isfinite(bias).all()):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class ModelParams:
    """All trainable parameters, in the documented flattening order:

    extractor (in->h1, h1->h2, 2*h2->F), prototype head (F->H, H->M),
    coefficient head (F->H, H->M); per layer weight then bias.
    """

    extractor: tuple
    prototype: tuple
    coefficient: tuple

    def layers(self):
        yield from self.extractor
        yield from self.prototype
        yield from self.coefficient

    def named_layers(self):
        for group, layers in (
            ("extractor", self.extractor),
            ("prototype", self.prototype),
            ("coefficient", self.coefficient),
        ):
            for i, layer in enumerate(layers):
                yield f"{group}[{i}]", layer


def init_params(config: Config, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    h1, h2 = config.extractor_hidden
    f, m, h = config.n_features, config.n_prototypes, config.head_hidden

    def layer(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return LayerParams(weight=weight, bias=np.zeros(fan_out))

    return ModelParams(
        extractor=(layer(config.n_channels, h1), layer(h1, h2), layer(2 * h2, f)),
        prototype=(layer(f, h), layer(h, m)),
        coefficient=(layer(f, h), layer(h, m)),
    )


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in params.layers()])


def vector_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    vec = np.asarray(vec, dtype=np.float64)
    offset = 0

    def take(layer):
        nonlocal offset
        nw, nb = layer.weight.size, layer.bias.size
        weight = vec[offset : offset + nw].reshape(layer.weight.shape)
        bias = vec[offset + nw : offset + nw + nb]
        offset += nw + nb
        return LayerParams(weight=weight, bias=bias)

    out = ModelParams(
        extractor=tuple(take(l) for l in template.extractor),
        prototype=tuple(take(l) for l in template.prototype),
        coefficient=tuple(take(l) for l in template.coefficient),
    )
    if offset != vec.size:
        raise ShapeError(f"vector length {vec.size} does not match template ({offset})")
    return out


def zeros_like_params(params: ModelParams) -> ModelParams:
    return vector_to_params(np.zeros(params_to_vector(params).size), params)


def extract_features(cloud: PointCloud, params: ModelParams):
    """Per-point features with global max-pooled context.

    Two ReLU layers per point, then each point's hidden vector is
    concatenated with the elementwise max over all points and mapped
    linearly to F dims. Returns (features N x F, cache).
    """
    l1, l2, l3 = params.extractor
    x = cloud.channels
    if x.shape[1] != l1.weight.shape[0]:
        raise ShapeError(
            f"cloud has {x.shape[1]} channels, extractor expects {l1.weight.shape[0]}"
        )
    z1 = x @ l1.weight + l1.bias
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ l2.weight + l2.bias
    a2 = np.maximum(z2, 0.0)
    pool_rows = np.argmax(a2, axis=0)  # ties resolve to the lowest index
    pooled = a2[pool_rows, np.arange(a2.shape[1])]
    h = np.concatenate([a2, np.broadcast_to(pooled, a2.shape)], axis=1)
    feats = h @ l3.weight + l3.bias
    cache = {"x": x, "m1": z1 > 0, "a1": a1, "m2": z2 > 0, "h": h, "pool_rows": pool_rows}
    return feats, cache


def extract_features_backward(cache, params: ModelParams, d_feats: np.ndarray):
    """Gradients of the extractor layers; ReLU subgradient 0 at the kink,
    max-pool gradient flows to the argmax row (ties to the lowest index)."""
    l1, l2, l3 = params.extractor
    h = cache["h"]
    h2 = cache["m2"].shape[1]
    d_w3 = h.T @ d_feats
    d_b3 = d_feats.sum(axis=0)
    d_h = d_feats @ l3.weight.T
    d_a2 = d_h[:, :h2].copy()
    d_pool = d_h[:, h2:].sum(axis=0)
    d_a2[cache["pool_rows"], np.arange(h2)] += d_pool
    d_z2 = d_a2 * cache["m2"]
    d_w2 = cache["a1"].T @ d_z2
    d_b2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ l2.weight.T
    d_z1 = d_a1 * cache["m1"]
    d_w1 = cache["x"].T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    return (
        LayerParams(d_w1, d_b1),
        LayerParams(d_w2, d_b2),
        LayerParams(d_w3, d_b3),
    )


def prototype_head(features: np.ndarray, params: ModelParams):
    """Row-wise MLP from features to raw per-point prototype scores (N x M)."""
    l1, l2 = params.prototype
    if features.shape[1] != l1.weight.shape[0]:
        raise ShapeError(
            f"features have width {features.shape[1]}, head expects {l1.weight.shape[0]}"
        )
    z1 = features @ l1.weight + l1.bias
    a1 = np.maximum(z1, 0.0)
    scores = a1 @ l2.weight + l2.bias
    cache = {"features": features, "m1": z1 > 0, "a1": a1}
    return scores, cache


def prototype_head_backward(cache, params: ModelParams, d_scores: np.ndarray):
    """Returns (layer grads, d_features)."""
    l1, l2 = params.prototype
    d_w2 = cache["a1"].T @ d_scores
    d_b2 = d_scores.sum(axis=0)
    d_a1 = d_scores @ l2.weight.T
    d_z1 = d_a1 * cache["m1"]
    d_w1 = cache["features"].T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    d_features = d_z1 @ l1.weight.T
    return (LayerParams(d_w1, d_b1), LayerParams(d_w2, d_b2)), d_features


def neighborhoods(positions: np.ndarray, samples: SampledSet, k_neighbors: int):
    """k nearest neighbors per sample (ties to the lowest index) with
    normalized inverse-distance weights. Returns (indices K x k, weights K x k)."""
    n = positions.shape[0]
    if k_neighbors > n:
        raise ShapeError(f"k_neighbors={k_neighbors} exceeds cloud size {n}")
    nbr = np.empty((len(samples), k_neighbors), dtype=np.int64)
    weights = np.empty((len(samples), k_neighbors), dtype=np.float64)
    for j, q in enumerate(samples.coordinates):
        d2 = ((positions - q) ** 2).sum(axis=1)
        order = np.argsort(d2, kind="stable")[:k_neighbors]
        w = 1.0 / (np.sqrt(d2[order]) + _IDW_DELTA)
        nbr[j] = order
        weights[j] = w / w.sum()
    return nbr, weights


def coefficient_head(
    features: np.ndarray,
    samples: SampledSet,
    positions: np.ndarray,
    params: ModelParams,
    k_neighbors: int = 16,
):
    """Coefficients for each sampled point from its local neighborhood.

    Neighbor features are aggregated by inverse-distance-weighted mean, then
    mapped through an MLP with tanh output, so entries lie strictly inside
    (-1, 1). Returns (coefficients K x M, cache).
    """
    l1, l2 = params.coefficient
    nbr, weights = neighborhoods(positions, samples, k_neighbors)
    agg = np.einsum("jk,jkf->jf", weights, features[nbr])
    z1 = agg @ l1.weight + l1.bias
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ l2.weight + l2.bias
    coeff = np.tanh(z2)
    cache = {
        "nbr": nbr,
        "weights": weights,
        "agg": agg,
        "m1": z1 > 0,
        "a1": a1,
        "coeff": coeff,
        "n_points": features.shape[0],
    }
    return coeff, cache


def coefficient_head_backward(cache, params: ModelParams, d_coeff: np.ndarray):
    """Returns (layer grads, d_features); the aggregation scatters gradients
    back to neighbor points via the same normalized weights."""
    l1, l2 = params.coefficient
    d_z2 = d_coeff * (1.0 - cache["coeff"] ** 2)
    d_w2 = cache["a1"].T @ d_z2
    d_b2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ l2.weight.T
    d_z1 = d_a1 * cache["m1"]
    d_w1 = cache["agg"].T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    d_agg = d_z1 @ l1.weight.T
    d_features = np.zeros((cache["n_points"], d_agg.shape[1]))
    nbr, weights = cache["nbr"], cache["weights"]
    for j in range(nbr.shape[0]):
        np.add.at(d_features, nbr[j], weights[j][:, None] * d_agg[j])
    return (LayerParams(d_w1, d_b1), LayerParams(d_w2, d_b2)), d_features


CHECKPOINT_MAGIC = b"PCKP"
_CKPT_HEADER = struct.Struct("<4sHI")


def save_checkpoint(path, params: ModelParams, config: Config) -> None:
    """Write magic "PCKP", a config echo, then the flat little-endian
    float64 parameter vector in the documented layer order."""
    echo = config_to_text(config).encode("ascii")
    vec = params_to_vector(params)
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, 1, len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<Q", vec.size))
        fh.write(vec.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, Config]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, echo_len = _CKPT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_HEADER.size
    config = Config.from_mapping(parse_key_values(data[offset : offset + echo_len].decode("ascii")))
    offset += echo_len
    (count,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    vec = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
    template = init_params(config, np.random.Generator(np.random.PCG64(0)))
    return vector_to_params(vec, template), config


class Network:
    """The three heads bundled behind one forward/backward pair.

    `forward` caches intermediates; `backward` consumes the most recent
    cache and raises StateError when none exists.
    """

    def __init__(self, params: ModelParams, k_neighbors: int = 16):
        self.params = params
        self.k_neighbors = k_neighbors
        self._cache = None

    def forward(self, cloud: PointCloud, samples: SampledSet):
        """Returns (features N x F, prototypes N x M, coefficients K x M)."""
        feats, c_ext = extract_features(cloud, self.params)
        protos, c_proto = prototype_head(feats, self.params)
        coeffs, c_coeff = coefficient_head(
            feats, samples, cloud.positions, self.params, self.k_neighbors
        )
        self._cache = {"ext": c_ext, "proto": c_proto, "coeff": c_coeff}
        return feats, protos, coeffs

    def backward(self, d_protos: np.ndarray, d_coeffs: np.ndarray) -> ModelParams:
        """Parameter gradients for the cached forward pass."""
        if self._cache is None:
            raise StateError("backward requires a cached forward pass")
        proto_grads, d_feats_p = prototype_head_backward(
            self._cache["proto"], self.params, d_protos
        )
        coeff_grads, d_feats_c = coefficient_head_backward(
            self._cache["coeff"], self.params, d_coeffs
        )
        ext_grads = extract_features_backward(
            self._cache["ext"], self.params, d_feats_p + d_feats_c
        )
        return ModelParams(extractor=ext_grads, prototype=proto_grads, coefficient=coeff_grads)
