"""Anchor layout and exact inter-frame warping via the augmented transform.

An anchor is a 10-vector ``[x, y, z, w, l, h, cos(yaw), sin(yaw), vx, vy]``.
Yaw is stored as its unit vector everywhere; the scalar angle is only ever a
derived view, which sidesteps wrap-around ambiguity. Functions below operate
on arrays of shape ``(..., 10)`` so single anchors and batches share one path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateYawError, ValidationError

ANCHOR_DIM = 10

# column indices
X, Y, Z, W, L, H, COS_YAW, SIN_YAW, VX, VY = range(ANCHOR_DIM)

POS = slice(0, 3)
SIZE = slice(3, 6)
YAW = slice(6, 8)
VEL = slice(8, 10)

ROT_TOL = 1e-9
YAW_NORM_EPS = 1e-6


def make_anchor(position, size, yaw: float, velocity) -> np.ndarray:
    """Assemble a single 10-dim anchor from position, size, yaw angle, velocity."""
    a = np.empty(ANCHOR_DIM)
    a[POS] = position
    a[SIZE] = size
    a[COS_YAW] = np.cos(yaw)
    a[SIN_YAW] = np.sin(yaw)
    a[VEL] = velocity
    return a


def yaw_angle(anchors: np.ndarray) -> np.ndarray:
    """Scalar heading view of the stored yaw vector."""
    a = np.asarray(anchors)
    return np.arctan2(a[..., SIN_YAW], a[..., COS_YAW])


def speed(anchors: np.ndarray) -> np.ndarray:
    a = np.asarray(anchors)
    return np.sqrt(a[..., VX] * a[..., VX] + a[..., VY] * a[..., VY])


def yaw_normalize(anchors: np.ndarray, eps: float = YAW_NORM_EPS) -> np.ndarray:
    """Rescale yaw vectors to unit norm; every other field is untouched.

    Raises DegenerateYawError (listing offending row indices) when a yaw
    vector's norm falls below `eps` — e.g. after averaging antipodal headings.
    """
    a = np.array(anchors, dtype=np.float64)
    n = np.sqrt(a[..., COS_YAW] ** 2 + a[..., SIN_YAW] ** 2)
    bad = n < eps
    if bad.any():
        idx = np.argwhere(np.atleast_1d(bad)).tolist()
        raise DegenerateYawError(f"yaw vector norm < {eps} at rows {idx[:8]}")
    a[..., COS_YAW] = a[..., COS_YAW] / n
    a[..., SIN_YAW] = a[..., SIN_YAW] / n
    return a


@dataclass(frozen=True)
class EgoTransform:
    """Rigid transform between frames: p' = r @ p + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValidationError(f"bad transform shapes {r.shape}, {t.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > ROT_TOL:
            raise ValidationError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ROT_TOL:
            raise ValidationError("rotation determinant != 1 within 1e-9")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "EgoTransform":
        return EgoTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def planar(yaw: float, tx: float = 0.0, ty: float = 0.0, tz: float = 0.0) -> "EgoTransform":
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return EgoTransform(r, np.array([tx, ty, tz]))


def compose(first: EgoTransform, second: EgoTransform) -> EgoTransform:
    """Transform equal to applying `first`, then `second`."""
    return EgoTransform(second.r @ first.r, second.r @ first.t + second.t)


def invert(e: EgoTransform) -> EgoTransform:
    rt = e.r.T.copy()
    return EgoTransform(rt, -(rt @ e.t))


@dataclass(frozen=True)
class AugmentedTransform:
    """10x10 block-diagonal lift of an EgoTransform onto anchor vectors.

    Blocks: Diag(R, I3, R[:2,:2], R[:2,:2]); translation [T; 0x7]. Size never
    moves; yaw and velocity see the planar sub-rotation only (no translation),
    so warped object velocities stay ground-relative, merely re-expressed.
    """

    r_aug: np.ndarray
    t_aug: np.ndarray
    # contiguous transpose, precomputed so every caller (autodiff graph or
    # plain numpy) feeds np.matmul the identical buffer -> identical bits
    r_aug_t: np.ndarray


def build_augmented(e: EgoTransform) -> AugmentedTransform:
    r_aug = np.zeros((ANCHOR_DIM, ANCHOR_DIM))
    r_aug[POS, POS] = e.r
    r_aug[SIZE, SIZE] = np.eye(3)
    r_aug[YAW, YAW] = e.r[:2, :2]
    r_aug[VEL, VEL] = e.r[:2, :2]
    t_aug = np.zeros(ANCHOR_DIM)
    t_aug[POS] = e.t
    return AugmentedTransform(r_aug, t_aug, np.ascontiguousarray(r_aug.T))


def warp_anchor(anchors: np.ndarray, aug: AugmentedTransform) -> np.ndarray:
    """Apply the augmented transform to anchors of shape (..., 10)."""
    return np.matmul(np.asarray(anchors, dtype=np.float64), aug.r_aug_t) + aug.t_aug


def world_to_ego(pose: EgoTransform) -> EgoTransform:
    """Given an ego->world pose, the transform taking world coords into ego coords."""
    return invert(pose)


def ego_step(pose_prev: EgoTransform, pose_cur: EgoTransform) -> EgoTransform:
    """Transform taking coordinates in the previous ego frame into the current one.

    Poses are ego->world; the step is world->cur composed with prev->world.
    """
    return compose(pose_prev, invert(pose_cur))
