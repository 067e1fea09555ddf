"""Multi-hypothesis anchor alignment across an ego-motion step.

Given a bank of (anchor, feature query) pairs from the previous frame, the
aligner proposes one motion hypothesis per kinematic model, warps them into
the current ego frame, and lets per-instance dynamic weights — decoded from
the query itself — fuse the hypotheses back into a single anchor and an
updated query. The fused anchor is a convex combination of the hypotheses
(softmax weights), so each coordinate of the pre-refinement output is bounded
by the per-coordinate hypothesis extremes; a small refinement head then nudges
the result off that hull.

Every stage is written once against the backend protocol in ``tensor``:
under gradients it builds the autodiff graph, otherwise it runs the identical
numpy primitive sequence, so both paths agree bit for bit.

Shapes use K = instances, M = motion models, C = feature width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, ContractError, DegenerateYawError, ShapeError
from .geometry import (
    ANCHOR_DIM,
    COS_YAW,
    EgoTransform,
    SIN_YAW,
    VX,
    YAW_NORM_EPS,
    build_augmented,
)
from .motion import (
    LatentHead,
    MODEL_ORDER,
    MotionModelKind,
    decode_latents,
    predict,
)
from .tensor import MLP, LayerNorm, Linear, Tensor, active_ops

ArrayLike = Union[np.ndarray, Tensor]

DEFAULT_WIDTH = 32
MAX_INSTANCES = 64


@dataclass(frozen=True)
class AlignConfig:
    """Width and hypothesis set of the aligner."""

    c: int = DEFAULT_WIDTH
    models: tuple = tuple(k.value for k in MODEL_ORDER)
    max_instances: int = MAX_INSTANCES

    def __post_init__(self):
        if self.c < 4 or self.c % 4:
            raise ConfigError(f"c must be a positive multiple of 4, got {self.c}")
        if not self.models:
            raise ConfigError("at least one motion model is required")
        kinds = tuple(MotionModelKind(m) for m in self.models)
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"duplicate motion models: {self.models}")
        object.__setattr__(self, "models", kinds)
        if self.max_instances < 1:
            raise ConfigError("max_instances must be >= 1")

    @property
    def n_models(self) -> int:
        return len(self.models)


@dataclass
class InstanceBank:
    """Previous-frame state: anchors (K, 10) and feature queries (K, C)."""

    anchors: ArrayLike
    features: ArrayLike

    def __post_init__(self):
        a = self.anchors.data if isinstance(self.anchors, Tensor) else np.asarray(self.anchors)
        q = self.features.data if isinstance(self.features, Tensor) else np.asarray(self.features)
        if a.ndim != 2 or a.shape[1] != ANCHOR_DIM or a.shape[0] < 1:
            raise ShapeError(f"anchors must be (K>=1, 10), got {a.shape}")
        if q.ndim != 2 or q.shape[0] != a.shape[0]:
            raise ShapeError(
                f"features must be (K, C) with K={a.shape[0]}, got {q.shape}")

    @property
    def size(self) -> int:
        a = self.anchors.data if isinstance(self.anchors, Tensor) else self.anchors
        return a.shape[0]


@dataclass
class DecoderWeights:
    """Query-conditioned weights: conditioning (K, 2C, 2C), fusion (K, M, 1)."""

    conditioning: ArrayLike
    fusion: ArrayLike


@dataclass
class AlignmentResult:
    anchors: ArrayLike            # (K, 10) refined, unit yaw
    features: ArrayLike           # (K, C) updated queries
    anchors_pre_refine: ArrayLike  # (K, 10) raw convex combination
    weights: ArrayLike            # (K, M) softmax rows

    def values(self) -> "AlignmentResult":
        """Copy with every field unwrapped to a plain ndarray."""
        def v(x):
            return x.data if isinstance(x, Tensor) else np.asarray(x)
        return AlignmentResult(v(self.anchors), v(self.features),
                               v(self.anchors_pre_refine), v(self.weights))


class AlignerParams:
    """All learnable state. Construction order fixes the init RNG stream —
    append new modules at the end or saved artifacts stop reproducing."""

    def __init__(self, config: AlignConfig, seed: int):
        rng = np.random.default_rng(seed)
        c = config.c
        quarter = c // 4
        self.phi_p = MLP([3, c, quarter], rng)       # position
        self.phi_d = MLP([3, c, quarter], rng)       # box size
        self.phi_theta = MLP([2, c, quarter], rng)   # yaw vector
        self.phi_v = MLP([2, c, quarter], rng)       # velocity
        self.latent_head = LatentHead(c, rng)
        self.l_c = Linear(2 * c, 4 * c * c, rng)     # -> (2C, 2C) conditioning
        self.l_f = Linear(2 * c, config.n_models, rng)
        self.l_a = Linear(1, 1, rng)
        # hypernetwork-style neutral init: the generated conditioning starts at
        # the identity, fusion at a uniform average and the logit calibration
        # as pass-through, so feature content survives the fusion stack and the
        # mixture can move off uniform from the first training step
        self.l_c.weight.data = self.l_c.weight.data * 0.1
        self.l_c.bias.data = np.eye(2 * c).reshape(-1)
        self.l_f.bias.data = np.full(config.n_models, 1.0 / config.n_models)
        self.l_a.weight.data = np.ones((1, 1))
        self.l_a.bias.data = np.zeros(1)
        self.ln_c = LayerNorm(2 * c)
        self.ln_f = LayerNorm(2 * c)
        self.ffn = MLP([3 * c, c, c], rng)
        self.phi_r = MLP([c, c, ANCHOR_DIM], rng)
        self.config = config
        self.seed = int(seed)

    def _modules(self):
        return (
            ("phi_p", self.phi_p),
            ("phi_d", self.phi_d),
            ("phi_theta", self.phi_theta),
            ("phi_v", self.phi_v),
            ("latent_head", self.latent_head.net),
            ("l_c", self.l_c),
            ("l_f", self.l_f),
            ("l_a", self.l_a),
            ("ln_c", self.ln_c),
            ("ln_f", self.ln_f),
            ("ffn", self.ffn),
            ("phi_r", self.phi_r),
        )

    def named_parameters(self) -> dict:
        out: dict = {}
        for name, mod in self._modules():
            if isinstance(mod, MLP):
                for i, layer in enumerate(mod.layers):
                    out[f"{name}.{i}.weight"] = layer.weight
                    out[f"{name}.{i}.bias"] = layer.bias
            elif isinstance(mod, Linear):
                out[f"{name}.weight"] = mod.weight
                out[f"{name}.bias"] = mod.bias
            else:  # LayerNorm
                out[f"{name}.gain"] = mod.gain
                out[f"{name}.shift"] = mod.shift
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())


# -- pipeline stages ---------------------------------------------------------------


def _warp(ops, x, aug):
    """anchors (N, 10) -> warped (N, 10), rank-2 only; single shared path."""
    return ops.matmul(x, ops.const(aug.r_aug_t)) + ops.const(aug.t_aug)


def yaw_normalize_soft(x, ops=None) -> ArrayLike:
    """Differentiable unit-normalization of the yaw vector columns.

    Raises DegenerateYawError when any yaw norm is below YAW_NORM_EPS.
    """
    ops = ops or active_ops()
    cy = x[..., COS_YAW]
    sy = x[..., SIN_YAW]
    n = ops.sqrt(cy * cy + sy * sy)
    nd = ops.value(n)
    if np.any(nd < YAW_NORM_EPS):
        rows = np.argwhere(np.atleast_1d(nd < YAW_NORM_EPS)).tolist()
        raise DegenerateYawError(f"fused yaw norm < {YAW_NORM_EPS} at rows {rows[:8]}")
    one = x.shape[:-1] + (1,)
    return ops.concat([
        x[..., :COS_YAW],
        ops.reshape(cy / n, one),
        ops.reshape(sy / n, one),
        x[..., VX:],
    ], axis=-1)


def encode_motion_embedding(params: AlignerParams, anchors_like, ops=None):
    """Anchor-shaped input (..., 10) -> geometry embedding (..., C).

    Rank-3 input is flattened so both the hypothesis batch and single anchors
    traverse the identical rank-2 primitive sequence.
    """
    ops = ops or active_ops()
    x = anchors_like
    shape = x.shape
    if len(shape) == 3:
        x = ops.reshape(x, (shape[0] * shape[1], shape[2]))
    parts = [
        ops.mlp(x[..., 0:3], params.phi_p),
        ops.mlp(x[..., 3:6], params.phi_d),
        ops.mlp(x[..., 6:8], params.phi_theta),
        ops.mlp(x[..., 8:10], params.phi_v),
    ]
    emb = ops.concat(parts, axis=-1)
    if len(shape) == 3:
        emb = ops.reshape(emb, (shape[0], shape[1], params.config.c))
    return emb


def generate_anchor_hypotheses(params: AlignerParams, anchors, queries,
                               dt: float, ego: EgoTransform, ops=None):
    """One warped prediction per motion model: (K, 10) -> (K, M, 10).

    Kinematic controls are decoded from the queries by the shared latent
    head; each model consumes only the fields it defines.
    """
    ops = ops or active_ops()
    aug = build_augmented(ego)
    anchors = ops.const(anchors)
    lat = decode_latents(ops.const(queries), params.latent_head, ops=ops)
    hyps = [predict(kind, anchors, dt, lat) for kind in params.config.models]
    k = anchors.shape[0]
    m = len(hyps)
    stacked = ops.reshape(ops.stack(hyps, axis=1), (k * m, ANCHOR_DIM))
    return ops.reshape(_warp(ops, stacked, aug), (k, m, ANCHOR_DIM))


def build_feature_hypotheses(params: AlignerParams, hyp_anchors, queries, ops=None):
    """Pair each hypothesis embedding with its instance query: (K, M, 2C)."""
    ops = ops or active_ops()
    k, m, _ = hyp_anchors.shape
    emb = encode_motion_embedding(params, hyp_anchors, ops=ops)
    q_rep = ops.stack([queries] * m, axis=1)
    return ops.concat([emb, q_rep], axis=-1)


def compute_dynamic_weights(params: AlignerParams, conditioning_query, ops=None) -> DecoderWeights:
    """Instance-conditioned weights from q~ (K, 2C)."""
    ops = ops or active_ops()
    k = conditioning_query.shape[0]
    c2 = 2 * params.config.c
    w_c = ops.reshape(ops.linear(conditioning_query, params.l_c), (k, c2, c2))
    w_f = ops.reshape(ops.linear(conditioning_query, params.l_f),
                      (k, params.config.n_models, 1))
    return DecoderWeights(conditioning=w_c, fusion=w_f)


def fuse_features(params: AlignerParams, feature_hyps, weights: DecoderWeights, ops=None):
    """Condition, then collapse the hypothesis axis: (K, M, 2C) -> (K, 2C)."""
    ops = ops or active_ops()
    k = feature_hyps.shape[0]
    c2 = feature_hyps.shape[-1]
    conditioned = ops.relu(ops.layernorm(
        ops.matmul(feature_hyps, weights.conditioning), params.ln_c))
    pooled = ops.reshape(
        ops.matmul(ops.swapaxes(weights.fusion, 1, 2), conditioned), (k, c2))
    return ops.relu(ops.layernorm(pooled, params.ln_f))


def decode_anchor_weights(params: AlignerParams, weights: DecoderWeights, ops=None):
    """Fusion weights -> per-model mixture rows (K, M), strictly positive, sum 1."""
    ops = ops or active_ops()
    k, m, _ = weights.fusion.shape
    logits = ops.reshape(
        ops.linear(ops.reshape(weights.fusion, (k * m, 1)), params.l_a), (k, m))
    return ops.softmax(logits, axis=-1)


def combine_anchor_hypotheses(hyp_anchors, mixture, ops=None):
    """Convex combination of hypotheses: (K, M, 10) x (K, M) -> (K, 10).

    Returned raw — yaw is *not* renormalized here, so every coordinate lies
    inside the per-coordinate hypothesis hull.
    """
    ops = ops or active_ops()
    k, m, _ = hyp_anchors.shape
    row = ops.reshape(mixture, (k, 1, m))
    return ops.reshape(ops.matmul(row, hyp_anchors), (k, ANCHOR_DIM))


def decode_anchor(raw_combination, ops=None):
    """Project the raw combination back onto unit yaw."""
    return yaw_normalize_soft(raw_combination, ops=ops)


def mix_feature_anchor(params: AlignerParams, anchor, fused_query, ops=None):
    """Fold the fused anchor's geometry back into the query: -> (K, C)."""
    ops = ops or active_ops()
    emb = encode_motion_embedding(params, anchor, ops=ops)
    return ops.mlp(ops.concat([emb, fused_query], axis=-1), params.ffn)


def align(bank: InstanceBank, dt: float, ego: EgoTransform,
          params: AlignerParams, ops=None) -> AlignmentResult:
    """Full alignment of a bank across one ego step of `dt` seconds."""
    ops = ops or active_ops()
    k = bank.size
    if k > params.config.max_instances:
        raise ContractError(
            f"bank holds {k} instances, config allows {params.config.max_instances}")
    qdata = bank.features.data if isinstance(bank.features, Tensor) else np.asarray(bank.features)
    if qdata.shape[1] != params.config.c:
        raise ContractError(
            f"feature width {qdata.shape[1]} != configured c={params.config.c}")

    anchors = ops.const(bank.anchors)
    queries = ops.const(bank.features)
    aug = build_augmented(ego)

    hyps = generate_anchor_hypotheses(params, anchors, queries, dt, ego, ops=ops)
    feature_hyps = build_feature_hypotheses(params, hyps, queries, ops=ops)
    current = _warp(ops, anchors, aug)
    q_tilde = ops.concat([encode_motion_embedding(params, current, ops=ops), queries],
                         axis=-1)
    weights = compute_dynamic_weights(params, q_tilde, ops=ops)
    fused_query = fuse_features(params, feature_hyps, weights, ops=ops)
    mixture = decode_anchor_weights(params, weights, ops=ops)
    raw = combine_anchor_hypotheses(hyps, mixture, ops=ops)
    mid = decode_anchor(raw, ops=ops)
    q_out = mix_feature_anchor(params, mid, fused_query, ops=ops)
    refined = yaw_normalize_soft(mid + ops.mlp(q_out, params.phi_r), ops=ops)
    return AlignmentResult(anchors=refined, features=q_out,
                           anchors_pre_refine=raw, weights=mixture)
