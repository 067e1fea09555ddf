"""Anchor layout and exact 10-dim warping under ego transforms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypalign.errors import DegenerateYawError, ValidationError
from hypalign.geometry import (
    ANCHOR_DIM,
    EgoTransform,
    build_augmented,
    compose,
    ego_step,
    invert,
    make_anchor,
    speed,
    warp_anchor,
    world_to_ego,
    yaw_angle,
    yaw_normalize,
)

from conftest import make_batch

angles = st.floats(min_value=-np.pi, max_value=np.pi, allow_nan=False)
shifts = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)


def test_make_anchor_layout():
    a = make_anchor(position=(1, 2, 3), size=(2, 4, 1.5), yaw=0.3, velocity=(5, -1))
    assert a.shape == (ANCHOR_DIM,)
    assert np.allclose(a[:3], [1, 2, 3])
    assert np.allclose(a[3:6], [2, 4, 1.5])
    assert abs(yaw_angle(a) - 0.3) < 1e-12
    assert np.allclose(a[8:], [5, -1])
    assert abs(speed(a) - np.hypot(5, 1)) < 1e-12


# -- EgoTransform validation -----------------------------------------------------


def test_rejects_non_orthonormal_rotation():
    r = np.eye(3)
    r[0, 0] = 1.001
    with pytest.raises(ValidationError):
        EgoTransform(r, np.zeros(3))


def test_rejects_reflection():
    r = np.diag([1.0, 1.0, -1.0])    # det = -1
    with pytest.raises(ValidationError):
        EgoTransform(r, np.zeros(3))


def test_identity_and_planar_constructors():
    e = EgoTransform.identity()
    assert np.array_equal(e.r, np.eye(3))
    p = EgoTransform.planar(np.pi / 2, 1.0, 2.0, 3.0)
    assert np.allclose(p.r @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(p.t, [1, 2, 3])


# -- augmented transform ----------------------------------------------------------


def test_augmented_block_layout():
    e = EgoTransform.planar(0.4, 1.0, -2.0, 0.5)
    aug = build_augmented(e)
    assert aug.r_aug.shape == (10, 10)
    assert np.array_equal(aug.r_aug[:3, :3], e.r)
    assert np.array_equal(aug.r_aug[3:6, 3:6], np.eye(3))      # size block
    assert np.array_equal(aug.r_aug[6:8, 6:8], e.r[:2, :2])    # yaw block
    assert np.array_equal(aug.r_aug[8:10, 8:10], e.r[:2, :2])  # velocity block
    off = aug.r_aug.copy()
    off[:3, :3] = 0; off[3:6, 3:6] = 0; off[6:8, 6:8] = 0; off[8:10, 8:10] = 0
    assert np.count_nonzero(off) == 0
    assert np.array_equal(aug.t_aug[:3], e.t)
    assert np.count_nonzero(aug.t_aug[3:]) == 0
    assert np.array_equal(aug.r_aug_t, aug.r_aug.T)


def test_identity_augmented_is_identity():
    aug = build_augmented(EgoTransform.identity())
    assert np.array_equal(aug.r_aug, np.eye(10))
    assert np.array_equal(aug.t_aug, np.zeros(10))


def test_quarter_turn_maps_velocity():
    aug = build_augmented(EgoTransform.planar(np.pi / 2))
    a = make_anchor(position=(0, 0, 0), size=(1, 1, 1), yaw=0.0, velocity=(1, 0))
    b = warp_anchor(a, aug)
    assert np.allclose(b[8:], [0, 1], atol=1e-12)
    assert np.allclose(b[6:8], [0, 1], atol=1e-12)   # yaw vector rotates too


# -- warp ---------------------------------------------------------------------------


def test_identity_warp_is_noop(anchor_batch):
    out = warp_anchor(anchor_batch, build_augmented(EgoTransform.identity()))
    assert np.array_equal(out, anchor_batch)


def test_pure_translation_shifts_position_only(anchor_batch):
    delta = 7.25
    aug = build_augmented(EgoTransform.planar(0.0, delta))
    out = warp_anchor(anchor_batch, aug)
    assert np.array_equal(out[:, 0], anchor_batch[:, 0] + delta)
    assert np.array_equal(out[:, 1:], anchor_batch[:, 1:])


def test_warp_preserves_size_exactly_and_speed(anchor_batch):
    aug = build_augmented(EgoTransform.planar(1.1, 3.0, -4.0, 0.2))
    out = warp_anchor(anchor_batch, aug)
    assert np.array_equal(out[:, 3:6], anchor_batch[:, 3:6])
    v_in = np.linalg.norm(anchor_batch[:, 8:], axis=1)
    v_out = np.linalg.norm(out[:, 8:], axis=1)
    assert np.abs(v_in - v_out).max() < 1e-12


def test_warp_then_inverse_recovers(anchor_batch):
    e = EgoTransform.planar(0.9, 5.0, -1.0, 0.3)
    out = warp_anchor(warp_anchor(anchor_batch, build_augmented(e)),
                      build_augmented(invert(e)))
    assert np.abs(out - anchor_batch).max() < 1e-9


@settings(max_examples=60, deadline=None)
@given(angles, shifts, shifts, st.floats(min_value=0.0, max_value=1.0))
def test_warp_affine_combination_property(yaw, tx, ty, alpha):
    """warp(alpha*a + (1-alpha)*b) == alpha*warp(a) + (1-alpha)*warp(b)."""
    rng = np.random.default_rng(int(abs(tx) * 1000) + 1)
    a, b = make_batch(rng, 2)
    aug = build_augmented(EgoTransform.planar(yaw, tx, ty))
    mixed = warp_anchor(alpha * a + (1 - alpha) * b, aug)
    split = alpha * warp_anchor(a, aug) + (1 - alpha) * warp_anchor(b, aug)
    assert np.abs(mixed - split).max() < 1e-9


def test_warp_rejects_wrong_width():
    with pytest.raises(Exception):
        warp_anchor(np.zeros((3, 9)), build_augmented(EgoTransform.identity()))


# -- pose algebra ---------------------------------------------------------------------


def test_invert_identity():
    e = invert(EgoTransform.identity())
    assert np.allclose(e.r, np.eye(3), atol=1e-12)
    assert np.allclose(e.t, 0, atol=1e-12)


def test_compose_rotations_add():
    a = EgoTransform.planar(np.pi / 6)
    b = EgoTransform.planar(np.pi / 3)
    c = compose(a, b)
    assert np.allclose(c.r, EgoTransform.planar(np.pi / 2).r, atol=1e-12)


def test_compose_chain_matches_matrix_product():
    rng = np.random.default_rng(2)
    chain = [EgoTransform.planar(rng.uniform(-1, 1), *rng.uniform(-5, 5, 3))
             for _ in range(5)]
    e = chain[0]
    for nxt in chain[1:]:
        e = compose(e, nxt)
    # homogeneous-matrix oracle
    m = np.eye(4)
    for t in chain:
        h = np.eye(4)
        h[:3, :3] = t.r
        h[:3, 3] = t.t
        m = h @ m
    assert np.abs(e.r - m[:3, :3]).max() < 1e-12
    assert np.abs(e.t - m[:3, 3]).max() < 1e-12


def test_compose_invert_round_trip():
    e = EgoTransform.planar(0.77, 2.0, -3.0, 1.0)
    rt = compose(e, invert(e))
    assert np.abs(rt.r - np.eye(3)).max() < 1e-9
    assert np.abs(rt.t).max() < 1e-9


def test_ego_step_maps_between_frames(anchor_batch):
    """ego_step(prev, cur) re-expresses prev-frame coordinates in the cur frame."""
    prev = EgoTransform.planar(0.3, 10.0, 5.0)
    cur = EgoTransform.planar(0.5, 12.0, 6.0)
    step = ego_step(prev, cur)
    direct = warp_anchor(anchor_batch, build_augmented(step))
    via_world = warp_anchor(warp_anchor(anchor_batch, build_augmented(prev)),
                            build_augmented(world_to_ego(cur)))
    assert np.abs(direct - via_world).max() < 1e-9


# -- yaw normalization ------------------------------------------------------------


def test_yaw_normalize_scales_to_unit():
    a = make_anchor(position=(0, 0, 0), size=(1, 1, 1), yaw=0.0, velocity=(0, 0))
    a[6], a[7] = 2.0, 0.0
    out = yaw_normalize(a)
    assert np.allclose(out[6:8], [1.0, 0.0])
    assert np.array_equal(out[:6], a[:6])
    assert np.array_equal(out[8:], a[8:])


def test_yaw_normalize_unit_input_unchanged():
    a = make_anchor(position=(1, 1, 0), size=(1, 1, 1), yaw=0.0, velocity=(0, 0))
    a[6], a[7] = 0.6, 0.8
    assert np.array_equal(yaw_normalize(a)[6:8], [0.6, 0.8])


def test_yaw_normalize_degenerate_raises_with_row():
    a = np.tile(make_anchor(position=(0, 0, 0), size=(1, 1, 1), yaw=0.1,
                            velocity=(0, 0)), (3, 1))
    a[1, 6], a[1, 7] = 1e-9, 0.0
    with pytest.raises(DegenerateYawError) as exc:
        yaw_normalize(a)
    assert "1" in str(exc.value)
