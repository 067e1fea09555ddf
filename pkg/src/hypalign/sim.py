"""Synthetic multi-regime trajectory benchmark.

Tracks live in a fixed world frame and advance through contiguous regime
segments; every frame-to-frame ground-truth transition is a literal
`motion.predict` call, so generated data satisfies the closed forms exactly
(the noise model only ever touches observations). A planar ego vehicle drives
through the same world; observations are ground truth re-expressed in the
ego frame of each time step plus Gaussian noise on position, yaw vector and
velocity.

Static objects are realized as whole static tracks: a mid-track static
segment would zero the velocity that later segments are required to carry
over, collapsing them into more static frames. Drawing the track type once
keeps the configured frame mix in expectation without that degeneracy.

All randomness flows from `np.random.default_rng([master_seed, stream])`
with one stream per track (ego uses stream 0), so scenes are reproducible
and track generation is order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .geometry import (
    COS_YAW,
    EgoTransform,
    POS,
    SIN_YAW,
    VEL,
    YAW,
    build_augmented,
    ego_step,
    invert,
    warp_anchor,
    yaw_normalize,
)
from .motion import LatentKinematics, MotionModelKind, predict
from .tensor import MLP, active_ops

DEFAULT_MIX = {
    "cv": 0.30,
    "static": 0.20,
    "ca": 0.20,
    "ctrv": 0.15,
    "ctra": 0.15,
}

WINDOW = 3  # frames of history feeding each query


@dataclass(frozen=True)
class NoiseConfig:
    """Observation noise standard deviations."""

    pos: float = 0.3
    yaw: float = 0.05
    vel: float = 0.2

    def __post_init__(self):
        if min(self.pos, self.yaw, self.vel) < 0:
            raise ConfigError(f"noise stds must be >= 0, got {self}")


@dataclass(frozen=True)
class SimConfig:
    n_tracks: int = 20
    n_frames: int = 40
    dt: float = 0.5
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    speed_max: float = 17.0     # initial; |a| <= 0.1 over 20 s keeps it under 20
    omega_range: tuple = (0.02, 0.1)   # |omega| draw for turning segments
    accel_range: tuple = (0.02, 0.1)   # |a| draw for accelerating segments
    segment_frames: tuple = (8, 16)
    ego_speed_range: tuple = (3.0, 10.0)
    ego_omega_max: float = 0.05

    def __post_init__(self):
        if self.n_tracks < 1 or self.n_frames < 2:
            raise ConfigError("need n_tracks >= 1 and n_frames >= 2")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if set(self.mix) - {k.value for k in MotionModelKind}:
            raise ConfigError(f"unknown regime kinds in mix: {sorted(self.mix)}")
        weights = np.array(list(self.mix.values()), dtype=float)
        if (weights < 0).any() or weights.sum() <= 0:
            raise ConfigError(f"mix weights must be >= 0 and sum > 0, got {self.mix}")
        lo, hi = self.omega_range
        if not 0 <= lo <= hi <= 0.1:
            raise ConfigError(f"omega_range must be within [0, 0.1], got {self.omega_range}")
        lo, hi = self.accel_range
        if not 0 <= lo <= hi <= 0.1:
            raise ConfigError(f"accel_range must be within [0, 0.1], got {self.accel_range}")
        if not 1 <= self.segment_frames[0] <= self.segment_frames[1]:
            raise ConfigError(f"bad segment_frames {self.segment_frames}")
        if not (0 < self.speed_max <= 20):
            raise ConfigError(f"speed_max must be in (0, 20], got {self.speed_max}")


@dataclass(frozen=True)
class RegimeSegment:
    kind: MotionModelKind
    duration: int  # transitions governed by this segment
    ax: float = 0.0
    ay: float = 0.0
    accel: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if self.duration < 1:
            raise ContractError(f"segment duration must be >= 1, got {self.duration}")
        if max(abs(self.ax), abs(self.ay), abs(self.accel), abs(self.omega)) > 0.1:
            raise ContractError(f"segment parameters exceed model bounds: {self}")

    def latents(self) -> LatentKinematics:
        return LatentKinematics(self.ax, self.ay, self.accel, self.omega)


@dataclass(frozen=True)
class ObjectTrack:
    object_id: int
    anchors: np.ndarray   # (F, 10) world-frame ground truth
    labels: tuple         # per-frame regime kind; labels[f] governs f -> f+1
    segments: tuple       # the RegimeSegments realizing the labels


@dataclass(frozen=True)
class Scene:
    poses: tuple          # per-frame ego->world EgoTransform
    tracks: tuple
    dt: float
    seed: int

    @property
    def n_frames(self) -> int:
        return len(self.poses)


def _draw_segments(cfg: SimConfig, rng: np.random.Generator,
                   heading0: float) -> list[RegimeSegment]:
    """Moving-track segment chain covering n_frames - 1 transitions."""
    moving = {k: w for k, w in cfg.mix.items() if k != "static" and w > 0}
    if not moving:  # mix is all-static; moving tracks degenerate to cv
        moving = {"cv": 1.0}
    kinds = sorted(moving)
    probs = np.array([moving[k] for k in kinds])
    probs = probs / probs.sum()

    segments: list[RegimeSegment] = []
    remaining = cfg.n_frames - 1
    heading = heading0
    while remaining > 0:
        dur = int(rng.integers(cfg.segment_frames[0], cfg.segment_frames[1] + 1))
        dur = min(dur, remaining)
        kind = MotionModelKind(kinds[int(rng.choice(len(kinds), p=probs))])
        mag_om = rng.uniform(*cfg.omega_range) * (1 if rng.random() < 0.5 else -1)
        mag_a = rng.uniform(*cfg.accel_range) * (1 if rng.random() < 0.5 else -1)
        ax = ay = accel = omega = 0.0
        if kind is MotionModelKind.CA:
            # heading-aligned acceleration, frozen over the segment
            ax, ay = mag_a * np.cos(heading), mag_a * np.sin(heading)
        elif kind is MotionModelKind.CTRV:
            omega = mag_om
        elif kind is MotionModelKind.CTRA:
            omega, accel = mag_om, mag_a
        segments.append(RegimeSegment(kind, dur, ax, ay, accel, omega))
        heading += omega * dur * cfg.dt
        remaining -= dur
    return segments


def _roll_track(cfg: SimConfig, rng: np.random.Generator,
                object_id: int) -> ObjectTrack:
    pos = np.array([rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-0.5, 0.5)])
    size = np.array([rng.uniform(1.6, 2.2), rng.uniform(3.5, 5.5), rng.uniform(1.3, 2.0)])
    heading = rng.uniform(-np.pi, np.pi)
    is_static = rng.random() < cfg.mix.get("static", 0.0)

    anchor = np.empty(10)
    anchor[POS] = pos
    anchor[3:6] = size
    anchor[COS_YAW], anchor[SIN_YAW] = np.cos(heading), np.sin(heading)
    if is_static:
        anchor[VEL] = 0.0
        segments = [RegimeSegment(MotionModelKind.STATIC, cfg.n_frames - 1)]
    else:
        speed = rng.uniform(1.0, cfg.speed_max)
        anchor[VEL] = speed * anchor[YAW]
        segments = _draw_segments(cfg, rng, heading)

    anchors = np.empty((cfg.n_frames, 10))
    anchors[0] = anchor
    labels = []
    f = 0
    for seg in segments:
        lat = seg.latents()
        for _ in range(seg.duration):
            anchors[f + 1] = predict(seg.kind, anchors[f], cfg.dt, lat)
            labels.append(seg.kind.value)
            f += 1
    labels.append(labels[-1])  # last frame inherits the final transition's regime
    return ObjectTrack(object_id, anchors, tuple(labels), tuple(segments))


def _roll_ego(cfg: SimConfig, rng: np.random.Generator) -> tuple:
    speed = rng.uniform(*cfg.ego_speed_range)
    omega = rng.uniform(-cfg.ego_omega_max, cfg.ego_omega_max)
    x = y = 0.0
    yaw = rng.uniform(-np.pi, np.pi)
    poses = []
    for _ in range(cfg.n_frames):
        poses.append(EgoTransform.planar(yaw, x, y, 0.0))
        x += speed * cfg.dt * np.cos(yaw)
        y += speed * cfg.dt * np.sin(yaw)
        yaw += omega * cfg.dt
    return tuple(poses)


def generate_scene(cfg: SimConfig, seed: int) -> Scene:
    """Deterministic scene from (config, seed); stream 0 drives the ego,
    stream i+1 drives track i, so tracks are independent of generation order."""
    poses = _roll_ego(cfg, np.random.default_rng([seed, 0]))
    tracks = tuple(
        _roll_track(cfg, np.random.default_rng([seed, i + 1]), i)
        for i in range(cfg.n_tracks)
    )
    return Scene(poses, tracks, cfg.dt, int(seed))


@dataclass(frozen=True)
class Observations:
    """Noisy ego-frame anchors, (F, K, 10); row order follows scene.tracks."""

    anchors: np.ndarray
    seed: int


def gt_in_ego(scene: Scene, frame: int) -> np.ndarray:
    """Ground truth of every track at `frame`, in that frame's ego coordinates."""
    aug = build_augmented(invert(scene.poses[frame]))
    world = np.stack([t.anchors[frame] for t in scene.tracks])
    return warp_anchor(world, aug)


def observe(scene: Scene, noise: NoiseConfig, seed: int) -> Observations:
    """Perturb position, yaw vector and velocity; box size is never touched.

    Yaw vectors are re-normalized after perturbation so observations remain
    valid anchors. Zero noise reproduces the ego-frame ground truth exactly.
    """
    f, k = scene.n_frames, len(scene.tracks)
    rng = np.random.default_rng([seed, 0])
    out = np.empty((f, k, 10))
    for frame in range(f):
        clean = gt_in_ego(scene, frame)
        noisy = clean.copy()
        if noise.pos > 0:
            noisy[:, POS] += rng.normal(0.0, noise.pos, (k, 3))
        if noise.yaw > 0:
            noisy[:, YAW] += rng.normal(0.0, noise.yaw, (k, 2))
            noisy = yaw_normalize(noisy)
        if noise.vel > 0:
            noisy[:, VEL] += rng.normal(0.0, noise.vel, (k, 2))
        out[frame] = noisy
    return Observations(out, int(seed))


# -- query construction -------------------------------------------------------------


def query_window(scene: Scene, obs: Observations, frame: int) -> np.ndarray:
    """(K, 30) encoder input: the last WINDOW noisy anchors of each track,
    re-expressed in `frame`'s ego coordinates, positions relative to the
    newest anchor. Frames before the scene start repeat the earliest one."""
    if not 0 <= frame < scene.n_frames:
        raise ContractError(f"frame {frame} outside scene of {scene.n_frames}")
    k = len(scene.tracks)
    parts = []
    for h in range(frame - WINDOW + 1, frame + 1):
        src = max(h, 0)
        if src == frame:
            warped = obs.anchors[frame]
        else:
            step = ego_step(scene.poses[src], scene.poses[frame])
            warped = warp_anchor(obs.anchors[src], build_augmented(step))
        parts.append(warped)
    window = np.stack(parts, axis=1)  # (K, WINDOW, 10)
    window = window.copy()
    window[:, :, POS] -= window[:, -1:, POS]
    return window.reshape(k, WINDOW * 10)


class WindowEncoder:
    """Learnable map from a 3-frame anchor window to a C-dim query."""

    def __init__(self, c: int, seed: int):
        if c < 1:
            raise ContractError(f"c must be positive, got {c}")
        rng = np.random.default_rng(seed)
        self.net = MLP([WINDOW * 10, c, c], rng)
        self.c = int(c)
        self.seed = int(seed)

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.net.layers):
            out[f"encoder.{i}.weight"] = layer.weight
            out[f"encoder.{i}.bias"] = layer.bias
        return out

    def __call__(self, windows, ops=None):
        ops = ops or active_ops()
        return ops.mlp(ops.const(windows), self.net)
