"""Training and comparative evaluation over the synthetic benchmark.

Training supervises the aligned anchor directly against the ground-truth
next-frame anchor (smooth-L1 on position, yaw vector and velocity, equal
weights), expressed in the target frame's ego coordinates. There is no
downstream detector at this scale, so direct alignment supervision stands in
for task loss.

Evaluation runs every method over every consecutive frame pair and reports
translation / yaw-vector / velocity errors aggregated per regime, plus the
aligner's per-regime hypothesis-weight averages and wall-clock latency.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .align import AlignerParams, InstanceBank, align
from .baselines import ImplicitParams, implicit_sta, single_model_sta
from .errors import ContractError, TrainingError
from .geometry import POS, VEL, YAW, ego_step
from .motion import MotionModelKind
from .sim import Observations, Scene, gt_in_ego, query_window
from .tensor import Adam, NUMPY_OPS, TENSOR_OPS, no_grad, smooth_l1, tmean


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ContractError(f"bad training options: {self}")


def alignment_loss(pred, target: np.ndarray):
    """Smooth-L1 over position + yaw vector + velocity, equally weighted."""
    t = np.asarray(target)
    return (tmean(smooth_l1(pred[..., POS], t[..., POS]))
            + tmean(smooth_l1(pred[..., YAW], t[..., YAW]))
            + tmean(smooth_l1(pred[..., VEL], t[..., VEL])))


def _train(step_fn, parameters, scenes, observations, opts: TrainOptions) -> list:
    if not scenes:
        raise ContractError("need at least one scene to train on")
    if len(scenes) != len(observations):
        raise ContractError("scenes and observations must pair up")
    optimizer = Adam(parameters, lr=opts.lr)
    order = np.random.default_rng(opts.seed)
    pairs = [(si, g) for si, s in enumerate(scenes) for g in range(s.n_frames - 1)]
    curve = []
    for epoch in range(opts.epochs):
        total = 0.0
        for idx in order.permutation(len(pairs)):
            si, g = pairs[idx]
            loss = step_fn(scenes[si], observations[si], g)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError("loss became non-finite", epoch=epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value
        curve.append(total / len(pairs))
    return curve


def train_aligner(scenes, observations, params: AlignerParams, encoder,
                  opts: TrainOptions) -> list:
    """Fit the aligner and its query encoder; returns per-epoch mean loss."""

    def step(scene: Scene, obs: Observations, g: int):
        queries = encoder(query_window(scene, obs, g), ops=TENSOR_OPS)
        bank = InstanceBank(obs.anchors[g], queries)
        step_t = ego_step(scene.poses[g], scene.poses[g + 1])
        result = align(bank, scene.dt, step_t, params, ops=TENSOR_OPS)
        return alignment_loss(result.anchors, gt_in_ego(scene, g + 1))

    return _train(step, list(params.parameters()) + list(encoder.parameters()),
                  scenes, observations, opts)


def train_implicit(scenes, observations, params: ImplicitParams, encoder,
                   opts: TrainOptions) -> list:
    """Fit the implicit (query-residual) baseline and its encoder."""

    def step(scene: Scene, obs: Observations, g: int):
        queries = encoder(query_window(scene, obs, g), ops=TENSOR_OPS)
        bank = InstanceBank(obs.anchors[g], queries)
        step_t = ego_step(scene.poses[g], scene.poses[g + 1])
        pred = implicit_sta(bank, scene.dt, step_t, params, ops=TENSOR_OPS)
        return alignment_loss(pred, gt_in_ego(scene, g + 1))

    return _train(step, list(params.parameters()) + list(encoder.parameters()),
                  scenes, observations, opts)


# -- evaluation ---------------------------------------------------------------------


class AlignerMethod:
    def __init__(self, name: str, params: AlignerParams, encoder):
        self.name = name
        self.params = params
        self.encoder = encoder
        self.model_names = [k.value for k in params.config.models]

    def run(self, scene: Scene, obs: Observations, g: int):
        with no_grad():
            queries = self.encoder(query_window(scene, obs, g), ops=NUMPY_OPS)
            bank = InstanceBank(obs.anchors[g], queries)
            result = align(bank, scene.dt, ego_step(scene.poses[g], scene.poses[g + 1]),
                           self.params, ops=NUMPY_OPS)
        return result.anchors, result.weights


class SingleModelMethod:
    def __init__(self, kind: MotionModelKind | str):
        self.kind = MotionModelKind(kind)
        self.name = f"single_{self.kind.value}"
        self.model_names = None

    def run(self, scene: Scene, obs: Observations, g: int):
        anchors = obs.anchors[g]
        bank = InstanceBank(anchors, np.zeros((anchors.shape[0], 1)))
        out = single_model_sta(self.kind, bank, scene.dt,
                               ego_step(scene.poses[g], scene.poses[g + 1]))
        return out, None


class ImplicitMethod:
    def __init__(self, name: str, params: ImplicitParams, encoder):
        self.name = name
        self.params = params
        self.encoder = encoder
        self.model_names = None

    def run(self, scene: Scene, obs: Observations, g: int):
        with no_grad():
            queries = self.encoder(query_window(scene, obs, g), ops=NUMPY_OPS)
            bank = InstanceBank(obs.anchors[g], queries)
            out = implicit_sta(bank, scene.dt,
                               ego_step(scene.poses[g], scene.poses[g + 1]),
                               self.params, ops=NUMPY_OPS)
        return out, None


@dataclass(frozen=True)
class ReportRow:
    method: str
    regime: str
    pairs: int
    translation_mean: float
    translation_median: float
    yaw_mean: float
    velocity_mean: float


@dataclass
class EvalReport:
    rows: list
    weights: dict          # method -> regime -> list[M] mean hypothesis weights
    model_names: dict      # method -> list[str] for weight columns
    latency_ms: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def row(self, method: str, regime: str = "all") -> ReportRow:
        for r in self.rows:
            if r.method == method and r.regime == regime:
                return r
        raise KeyError(f"no row for {method}/{regime}")


def evaluate(scenes, observations, methods) -> EvalReport:
    """Per-pair alignment error of every method against ego-frame ground truth."""
    if not scenes:
        raise ContractError("empty scene set")
    if len(scenes) != len(observations):
        raise ContractError("scenes and observations must pair up")

    errs: dict = {m.name: {} for m in methods}
    wsums: dict = {m.name: {} for m in methods}
    model_names: dict = {}
    for scene, obs in zip(scenes, observations):
        regimes = np.array([[t.labels[g] for t in scene.tracks]
                            for g in range(scene.n_frames)])
        for g in range(scene.n_frames - 1):
            target = gt_in_ego(scene, g + 1)
            pair_regimes = regimes[g]
            for m in methods:
                pred, weights = m.run(scene, obs, g)
                dt_err = np.linalg.norm(pred[:, POS] - target[:, POS], axis=1)
                dy_err = np.linalg.norm(pred[:, YAW] - target[:, YAW], axis=1)
                dv_err = np.linalg.norm(pred[:, VEL] - target[:, VEL], axis=1)
                bucket = errs[m.name]
                for i, reg in enumerate(pair_regimes):
                    for key in (reg, "all"):
                        t_, y_, v_ = bucket.setdefault(key, ([], [], []))
                        t_.append(dt_err[i])
                        y_.append(dy_err[i])
                        v_.append(dv_err[i])
                if weights is not None:
                    model_names[m.name] = m.model_names
                    wb = wsums[m.name]
                    for i, reg in enumerate(pair_regimes):
                        for key in (reg, "all"):
                            acc = wb.setdefault(key, [np.zeros(weights.shape[1]), 0])
                            acc[0] += weights[i]
                            acc[1] += 1

    rows = []
    for m in methods:
        for regime in sorted(errs[m.name]):
            t_, y_, v_ = errs[m.name][regime]
            rows.append(ReportRow(
                method=m.name, regime=regime, pairs=len(t_),
                translation_mean=float(np.mean(t_)),
                translation_median=float(np.median(t_)),
                yaw_mean=float(np.mean(y_)),
                velocity_mean=float(np.mean(v_)),
            ))
    weights = {
        name: {reg: (acc[0] / acc[1]).tolist() for reg, acc in buckets.items()}
        for name, buckets in wsums.items() if buckets
    }
    return EvalReport(rows=rows, weights=weights, model_names=model_names)


def weight_report(scenes, observations, params: AlignerParams, encoder) -> dict:
    """Mean hypothesis weight per motion model per regime, with pair counts.

    Returns {regime: {"weights": [M floats], "pairs": int}}; rows sum to 1.
    """
    method = AlignerMethod("hat", params, encoder)
    report = evaluate(scenes, observations, [method])
    out = {}
    for regime, mean_w in report.weights["hat"].items():
        out[regime] = {"weights": mean_w, "pairs": report.row("hat", regime).pairs}
    return out


def measure_latency(method, scene: Scene, obs: Observations,
                    iters: int = 100) -> float:
    """Median wall-clock milliseconds of one frame-pair alignment call."""
    if iters < 1:
        raise ContractError("iters must be >= 1")
    method.run(scene, obs, 0)  # warm-up
    times = []
    for i in range(iters):
        g = i % (scene.n_frames - 1)
        t0 = time.perf_counter()
        method.run(scene, obs, g)
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))
