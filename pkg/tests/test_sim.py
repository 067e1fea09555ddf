"""Synthetic benchmark: scene generation, observation noise, query windows."""

import numpy as np
import pytest

from hypalign.errors import ConfigError, ContractError
from hypalign.geometry import EgoTransform, build_augmented, ego_step, invert, warp_anchor
from hypalign.motion import predict
from hypalign.sim import (
    NoiseConfig,
    RegimeSegment,
    SimConfig,
    WindowEncoder,
    generate_scene,
    gt_in_ego,
    observe,
    query_window,
)
from hypalign.tensor import Tensor

NO_NOISE = NoiseConfig(0.0, 0.0, 0.0)


def small_cfg(**kw):
    kw.setdefault("n_tracks", 6)
    kw.setdefault("n_frames", 12)
    return SimConfig(**kw)


def per_frame_segments(track):
    out = []
    for seg in track.segments:
        out.extend([seg] * seg.duration)
    return out


# -- config validation -------------------------------------------------------------


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(n_frames=1)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigError):
        SimConfig(mix={"hovercraft": 1.0})
    with pytest.raises(ConfigError):
        SimConfig(mix={"cv": -1.0})
    with pytest.raises(ConfigError):
        SimConfig(omega_range=(0.0, 0.2))       # beyond the latent bound
    with pytest.raises(ConfigError):
        SimConfig(speed_max=25.0)
    with pytest.raises(ConfigError):
        NoiseConfig(pos=-0.1)


def test_regime_segment_bounds():
    with pytest.raises(ContractError):
        RegimeSegment("ctrv", duration=0)
    with pytest.raises(ContractError):
        RegimeSegment("ctrv", duration=4, omega=0.2)


# -- scene generation ----------------------------------------------------------------


def test_generate_scene_deterministic():
    cfg = small_cfg()
    a, b = generate_scene(cfg, 17), generate_scene(cfg, 17)
    for ta, tb in zip(a.tracks, b.tracks):
        assert np.array_equal(ta.anchors, tb.anchors)
        assert ta.labels == tb.labels
    for pa, pb in zip(a.poses, b.poses):
        assert np.array_equal(pa.r, pb.r) and np.array_equal(pa.t, pb.t)


def test_generate_scene_seed_sensitivity():
    cfg = small_cfg()
    a, b = generate_scene(cfg, 17), generate_scene(cfg, 18)
    assert not np.array_equal(a.tracks[0].anchors, b.tracks[0].anchors)


def test_tracks_independent_of_track_count():
    """Per-track RNG streams: growing the scene must not reshuffle old tracks."""
    a = generate_scene(small_cfg(n_tracks=3), 7)
    b = generate_scene(small_cfg(n_tracks=6), 7)
    for i in range(3):
        assert np.array_equal(a.tracks[i].anchors, b.tracks[i].anchors)


def test_gt_transitions_are_literal_model_steps():
    """Every world-frame transition is one closed-form kinematic step."""
    scene = generate_scene(small_cfg(), 23)
    for track in scene.tracks:
        segs = per_frame_segments(track)
        assert len(segs) == scene.n_frames - 1
        for f, seg in enumerate(segs):
            expected = predict(seg.kind, track.anchors[f], scene.dt, seg.latents())
            assert np.array_equal(track.anchors[f + 1], expected)
            assert track.labels[f] == seg.kind.value
    assert track.labels[-1] == track.labels[-2]


def test_all_static_mix_freezes_tracks():
    scene = generate_scene(small_cfg(mix={"static": 1.0}), 3)
    for track in scene.tracks:
        assert np.array_equal(track.anchors, np.tile(track.anchors[0], (12, 1)))
        assert np.count_nonzero(track.anchors[:, 8:10]) == 0
        assert set(track.labels) == {"static"}


def test_moving_only_mix_has_no_static_labels():
    mix = {"cv": 0.5, "ctrv": 0.5}
    scene = generate_scene(small_cfg(mix=mix, n_tracks=10), 5)
    for track in scene.tracks:
        assert "static" not in track.labels


def test_speeds_stay_bounded():
    scene = generate_scene(SimConfig(n_tracks=10, n_frames=40), 29)
    for track in scene.tracks:
        speeds = np.linalg.norm(track.anchors[:, 8:10], axis=1)
        assert speeds.max() < 20.0


def test_yaw_rows_stay_unit_over_whole_tracks():
    scene = generate_scene(small_cfg(n_frames=40), 31)
    for track in scene.tracks:
        norms = np.linalg.norm(track.anchors[:, 6:8], axis=1)
        assert np.abs(norms - 1.0).max() < 1e-9


# -- observation --------------------------------------------------------------------


def test_zero_noise_observation_is_ego_frame_gt():
    scene = generate_scene(small_cfg(), 41)
    obs = observe(scene, NO_NOISE, 99)
    for frame in range(scene.n_frames):
        assert np.array_equal(obs.anchors[frame], gt_in_ego(scene, frame))


def test_observe_deterministic_and_seed_sensitive():
    scene = generate_scene(small_cfg(), 41)
    noise = NoiseConfig()
    a, b = observe(scene, noise, 5), observe(scene, noise, 5)
    assert np.array_equal(a.anchors, b.anchors)
    c = observe(scene, noise, 6)
    assert not np.array_equal(a.anchors, c.anchors)


def test_observation_never_touches_box_size():
    scene = generate_scene(small_cfg(), 41)
    obs = observe(scene, NoiseConfig(), 5)
    for frame in range(scene.n_frames):
        assert np.array_equal(obs.anchors[frame][:, 3:6], gt_in_ego(scene, frame)[:, 3:6])


def test_observed_yaw_stays_unit():
    scene = generate_scene(small_cfg(), 41)
    obs = observe(scene, NoiseConfig(yaw=0.3), 5)
    norms = np.linalg.norm(obs.anchors[..., 6:8], axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-12


def test_noise_magnitudes_match_config():
    scene = generate_scene(SimConfig(n_tracks=40, n_frames=30), 43)
    noise = NoiseConfig(pos=0.3, yaw=0.0, vel=0.2)
    obs = observe(scene, noise, 7)
    gt = np.stack([gt_in_ego(scene, f) for f in range(scene.n_frames)])
    pos_err = (obs.anchors[..., 0:3] - gt[..., 0:3]).ravel()
    vel_err = (obs.anchors[..., 8:10] - gt[..., 8:10]).ravel()
    assert abs(pos_err.std() - 0.3) < 0.05 * 0.3
    assert abs(vel_err.std() - 0.2) < 0.05 * 0.2
    assert abs(pos_err.mean()) < 0.02


# -- query windows ------------------------------------------------------------------


def test_query_window_rejects_out_of_range():
    scene = generate_scene(small_cfg(), 47)
    obs = observe(scene, NO_NOISE, 1)
    for frame in (-1, scene.n_frames):
        with pytest.raises(ContractError):
            query_window(scene, obs, frame)


def test_query_window_shape_and_frame0_padding():
    scene = generate_scene(small_cfg(), 47)
    obs = observe(scene, NO_NOISE, 1)
    k = len(scene.tracks)
    win = query_window(scene, obs, 0)
    assert win.shape == (k, 30)
    blocks = win.reshape(k, 3, 10)
    # history before the scene start repeats frame 0
    assert np.array_equal(blocks[:, 0], blocks[:, 2])
    assert np.array_equal(blocks[:, 1], blocks[:, 2])
    assert np.count_nonzero(blocks[:, :, 0:3]) == 0   # positions are relative


def test_query_window_newest_block_is_current_observation():
    scene = generate_scene(small_cfg(), 47)
    obs = observe(scene, NoiseConfig(), 3)
    frame = 6
    blocks = query_window(scene, obs, frame).reshape(len(scene.tracks), 3, 10)
    cur = obs.anchors[frame]
    assert np.count_nonzero(blocks[:, -1, 0:3]) == 0
    assert np.array_equal(blocks[:, -1, 3:], cur[:, 3:])


def test_query_window_history_uses_ego_chain():
    """With zero noise the older blocks are the old GT re-expressed in the
    current ego frame (up to the relative-position shift)."""
    scene = generate_scene(small_cfg(), 47)
    obs = observe(scene, NO_NOISE, 1)
    frame = 7
    blocks = query_window(scene, obs, frame).reshape(len(scene.tracks), 3, 10)
    cur = gt_in_ego(scene, frame)
    for back, h in ((2, frame), (1, frame - 1), (0, frame - 2)):
        step = ego_step(scene.poses[h], scene.poses[frame])
        expected = warp_anchor(gt_in_ego(scene, h), build_augmented(step))
        expected[:, 0:3] -= cur[:, 0:3]
        assert np.abs(blocks[:, back] - expected).max() < 1e-9


def test_query_window_direct_world_path_agrees():
    scene = generate_scene(small_cfg(), 47)
    obs = observe(scene, NO_NOISE, 1)
    frame = 9
    blocks = query_window(scene, obs, frame).reshape(len(scene.tracks), 3, 10)
    world = np.stack([t.anchors[frame - 1] for t in scene.tracks])
    direct = warp_anchor(world, build_augmented(invert(scene.poses[frame])))
    direct[:, 0:3] -= gt_in_ego(scene, frame)[:, 0:3]
    assert np.abs(blocks[:, 1] - direct).max() < 1e-9


# -- window encoder ------------------------------------------------------------------


def test_window_encoder_validation_and_shape(rng):
    with pytest.raises(ContractError):
        WindowEncoder(c=0, seed=1)
    enc = WindowEncoder(c=8, seed=1)
    out = enc(rng.normal(0, 1, (5, 30)), ops=None)
    out_np = out.data if isinstance(out, Tensor) else out
    assert out_np.shape == (5, 8)


def test_window_encoder_deterministic_by_seed(rng):
    w = rng.normal(0, 1, (4, 30))
    a = WindowEncoder(c=8, seed=3)(w)
    b = WindowEncoder(c=8, seed=3)(w)
    c = WindowEncoder(c=8, seed=4)(w)
    to_np = lambda t: t.data if isinstance(t, Tensor) else t
    assert np.array_equal(to_np(a), to_np(b))
    assert not np.array_equal(to_np(a), to_np(c))


def test_window_encoder_gradients_flow(rng):
    enc = WindowEncoder(c=8, seed=3)
    out = enc(rng.normal(0, 1, (4, 30)))
    (out * out).sum().backward()
    for name, p in enc.named_parameters().items():
        assert p.grad is not None and np.any(p.grad), name
