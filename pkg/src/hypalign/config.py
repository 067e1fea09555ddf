"""Experiment configuration: one JSON file, schema-validated, canonically
hashed. Unknown keys are rejected everywhere so a config that validates today
still means the same thing after upgrades.

Seeds for scenes, observation noise and per-method parameter initialization
are derived from the master seed through `np.random.SeedSequence`, keyed by a
(domain, index) pair, so adding a new consumer never shifts existing streams.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from .errors import ConfigError
from .motion import MotionModelKind
from .sim import DEFAULT_MIX, NoiseConfig, SimConfig

_KINDS = [k.value for k in MotionModelKind]

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "scenes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "tracks": {"type": "integer", "minimum": 1},
                "frames": {"type": "integer", "minimum": 2},
            },
        },
        "train_scenes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"count": {"type": "integer", "minimum": 1}},
        },
        "mix": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in _KINDS},
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pos": {"type": "number", "minimum": 0},
                "yaw": {"type": "number", "minimum": 0},
                "vel": {"type": "number", "minimum": 0},
            },
        },
        "motion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "speed_max": {"type": "number", "exclusiveMinimum": 0, "maximum": 20},
                "omega_range": {"type": "array", "items": {"type": "number"},
                                "minItems": 2, "maxItems": 2},
                "accel_range": {"type": "array", "items": {"type": "number"},
                                "minItems": 2, "maxItems": 2},
                "segment_frames": {"type": "array", "items": {"type": "integer"},
                                   "minItems": 2, "maxItems": 2},
            },
        },
        "align": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c": {"type": "integer", "minimum": 4},
                "models": {"type": "array", "items": {"enum": _KINDS}, "minItems": 1},
                "max_instances": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "latency_iters": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dt: float = 0.5
    scene_count: int = 10
    tracks: int = 20
    frames: int = 40
    train_scene_count: int = 12
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    noise_pos: float = 0.3
    noise_yaw: float = 0.05
    noise_vel: float = 0.2
    speed_max: float = 17.0
    omega_range: tuple = (0.02, 0.1)
    accel_range: tuple = (0.02, 0.1)
    segment_frames: tuple = (8, 16)
    align_c: int = 32
    align_models: tuple = tuple(_KINDS)
    max_instances: int = 64
    epochs: int = 25
    lr: float = 1e-3
    train_seeds: tuple = (0, 1, 2, 3, 4)
    latency_iters: int = 100

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config rejected: {exc.message}") from None
        scenes = doc.get("scenes", {})
        noise = doc.get("noise", {})
        motion = doc.get("motion", {})
        al = doc.get("align", {})
        tr = doc.get("train", {})
        ev = doc.get("eval", {})
        base = ExperimentConfig()
        cfg = ExperimentConfig(
            seed=doc.get("seed", base.seed),
            dt=doc.get("dt", base.dt),
            scene_count=scenes.get("count", base.scene_count),
            tracks=scenes.get("tracks", base.tracks),
            frames=scenes.get("frames", base.frames),
            train_scene_count=doc.get("train_scenes", {}).get(
                "count", base.train_scene_count),
            mix=doc.get("mix", dict(DEFAULT_MIX)),
            noise_pos=noise.get("pos", base.noise_pos),
            noise_yaw=noise.get("yaw", base.noise_yaw),
            noise_vel=noise.get("vel", base.noise_vel),
            speed_max=motion.get("speed_max", base.speed_max),
            omega_range=tuple(motion.get("omega_range", base.omega_range)),
            accel_range=tuple(motion.get("accel_range", base.accel_range)),
            segment_frames=tuple(motion.get("segment_frames", base.segment_frames)),
            align_c=al.get("c", base.align_c),
            align_models=tuple(al.get("models", base.align_models)),
            max_instances=al.get("max_instances", base.max_instances),
            epochs=tr.get("epochs", base.epochs),
            lr=tr.get("lr", base.lr),
            train_seeds=tuple(tr.get("seeds", base.train_seeds)),
            latency_iters=ev.get("latency_iters", base.latency_iters),
        )
        cfg.sim_config()  # surface invalid combinations now, as ConfigError
        return cfg

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return ExperimentConfig.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("omega_range", "accel_range", "segment_frames",
                    "align_models", "train_seeds"):
            d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def sim_config(self) -> SimConfig:
        return SimConfig(
            n_tracks=self.tracks,
            n_frames=self.frames,
            dt=self.dt,
            mix=dict(self.mix),
            noise=NoiseConfig(self.noise_pos, self.noise_yaw, self.noise_vel),
            speed_max=self.speed_max,
            omega_range=tuple(self.omega_range),
            accel_range=tuple(self.accel_range),
            segment_frames=tuple(self.segment_frames),
        )


# seed-derivation domains; append only, never renumber
DOM_EVAL_SCENE = 0
DOM_EVAL_OBS = 1
DOM_TRAIN_SCENE = 2
DOM_TRAIN_OBS = 3
DOM_ALIGNER_INIT = 4
DOM_ENCODER_INIT = 5
DOM_IMPLICIT_INIT = 6
DOM_SHUFFLE = 7
DOM_ALIGNER_M1_INIT = 8
DOM_ENCODER_M1_INIT = 9
DOM_IMPLICIT_ENC_INIT = 10


def derive_seed(master: int, domain: int, index: int = 0) -> int:
    """Collision-resistant 31-bit seed keyed by (master, domain, index)."""
    state = np.random.SeedSequence([int(master), int(domain), int(index)])
    return int(state.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)
