"""Closed-form single-step motion models and their numeric-integration oracle.

Five transition models — constant velocity (cv), static, constant acceleration
(ca), constant turn rate + velocity (ctrv) and constant turn rate +
acceleration (ctra) — advance a 10-dim anchor by one time step. z and the box
size are constant under every model. The turning models read the anchor
through combined speed ``v = |(vx, vy)|`` and heading, and reconstruct
(vx, vy) aligned with the advanced heading, discarding any lateral slip in
the stored velocity.

Position updates for the turning models use half-angle/series regroupings of
the textbook ``1/omega`` forms; these are algebraically identical but avoid
the catastrophic cancellation that otherwise wrecks the 1e-8 oracle bound
near the straight-line threshold.

`predict` is written once against the backend protocol in ``tensor``: pass a
Tensor to build a differentiable graph, an ndarray for plain numerics. Both
paths execute the same numpy primitives in the same order, so their outputs
are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .errors import ContractError, ShapeError
from .geometry import COS_YAW, SIN_YAW, VX, VY, X, Y
from .tensor import MLP, NUMPY_OPS, TENSOR_OPS, Tensor

ArrayLike = Union[np.ndarray, Tensor]


class MotionModelKind(str, Enum):
    CV = "cv"
    STATIC = "static"
    CA = "ca"
    CTRV = "ctrv"
    CTRA = "ctra"


MODEL_ORDER = (
    MotionModelKind.CV,
    MotionModelKind.STATIC,
    MotionModelKind.CA,
    MotionModelKind.CTRV,
    MotionModelKind.CTRA,
)

# |omega| below this uses the straight-line position limit.
OMEGA_EPS = 1e-6
# |omega * dt| below this uses the series form of the time-weighted turn
# integrals (the regrouped closed form is stable well past it; the margin
# keeps truncation error ~1e-22 while cancellation stays ~1e-13).
SMALL_ANGLE = 1e-3
# Decoded kinematic corrections are squashed into [-LATENT_BOUND, LATENT_BOUND].
LATENT_BOUND = 0.1
_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class LatentKinematics:
    """Per-instance decoded controls. Broadcast against the anchor batch.

    ax/ay feed ca; omega feeds ctrv and ctra; accel feeds ctra. All four live
    in [-0.1, 0.1] when produced by `LatentHead`.
    """

    ax: ArrayLike = 0.0
    ay: ArrayLike = 0.0
    accel: ArrayLike = 0.0
    omega: ArrayLike = 0.0

    @staticmethod
    def zeros() -> "LatentKinematics":
        return LatentKinematics(0.0, 0.0, 0.0, 0.0)


def _check_bound(lat: LatentKinematics) -> None:
    for name in ("ax", "ay", "accel", "omega"):
        value = getattr(lat, name)
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        if np.any(np.abs(data) > LATENT_BOUND + _BOUND_SLACK):
            raise ContractError(
                f"latent '{name}' exceeds |{LATENT_BOUND}|: max "
                f"{float(np.max(np.abs(data)))}"
            )


class LatentHead:
    """Maps a C-dim query to bounded (ax, ay, accel, omega) via 0.1*tanh."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.net = MLP([c, c, 4], rng)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, query, ops=TENSOR_OPS) -> LatentKinematics:
        raw = ops.mlp(query, self.net)
        squashed = ops.tanh(raw) * LATENT_BOUND
        return LatentKinematics(
            ax=squashed[..., 0],
            ay=squashed[..., 1],
            accel=squashed[..., 2],
            omega=squashed[..., 3],
        )


def decode_latents(query, head: LatentHead, ops=TENSOR_OPS) -> LatentKinematics:
    """Decode per-instance kinematic controls from feature queries (..., C)."""
    return head(query, ops=ops)


def _predict_ops(ops, kind: MotionModelKind, anchors, dt: float,
                 lat: LatentKinematics):
    x = anchors[..., X]
    y = anchors[..., Y]
    keep = anchors[..., X + 2:COS_YAW]  # z, w, l, h pass through untouched
    cy = anchors[..., COS_YAW]
    sy = anchors[..., SIN_YAW]
    vx = anchors[..., VX]
    vy = anchors[..., VY]

    if kind is MotionModelKind.CV:
        cols = [x + vx * dt, y + vy * dt, keep, cy, sy, vx, vy]
    elif kind is MotionModelKind.STATIC:
        zero = vx * 0.0
        cols = [x, y, keep, cy, sy, zero, zero]
    elif kind is MotionModelKind.CA:
        half = 0.5 * dt * dt
        cols = [
            x + vx * dt + lat.ax * half,
            y + vy * dt + lat.ay * half,
            keep,
            cy,
            sy,
            vx + lat.ax * dt,
            vy + lat.ay * dt,
        ]
    else:  # ctrv / ctra share the turn geometry
        om = lat.omega
        om_data = om.data if isinstance(om, Tensor) else np.asarray(om)
        turning = np.abs(om_data) >= OMEGA_EPS

        v = ops.sqrt(vx * vx + vy * vy)
        u = om * dt
        cu = ops.cos(u)
        su = ops.sin(u)
        cy1 = cy * cu - sy * su  # heading advanced by the full turn angle
        sy1 = sy * cu + cy * su
        uh = u * 0.5
        cuh = ops.cos(uh)
        suh = ops.sin(uh)
        ch = cy * cuh - sy * suh  # heading advanced by half the turn angle
        sh = sy * cuh + cy * suh

        # I_c = int_0^dt cos(theta + om*tau) dtau = dt*sinc(u/2)*cos(theta+u/2)
        # (and the sin twin). sinc stays exact through u -> 0, so only the
        # CTRV straight branch below is a genuine limit substitution.
        uh_safe = ops.where(turning, uh, 1.0)
        sinc_h = ops.where(turning, suh / uh_safe, 1.0)
        ic = dt * sinc_h * ch
        is_ = dt * sinc_h * sh

        if kind is MotionModelKind.CTRV:
            cols = [
                x + ops.where(turning, v * ic, vx * dt),
                y + ops.where(turning, v * is_, vy * dt),
                keep,
                cy1,
                sy1,
                v * cy1,
                v * sy1,
            ]
        else:  # ctra
            a = lat.accel
            u_data = om_data * dt
            series = np.abs(u_data) < SMALL_ANGLE
            wide = turning & ~series
            u_safe = ops.where(wide, u, 1.0)
            dt2 = dt * dt
            # J_c = int tau*cos(theta + om*tau) dtau, regrouped so the two
            # 1/u^2 terms never cancel:
            #   J_c = dt^2 [sin(theta+u)/u - 2 sin(theta+u/2) sin(u/2)/u^2]
            two_suh = (2.0 * suh) / (u_safe * u_safe)
            jc_closed = dt2 * (sy1 / u_safe - sh * two_suh)
            js_closed = dt2 * (ch * two_suh - cy1 / u_safe)
            # |u| < 1e-3: Maclaurin in u, truncation ~u^6.
            u2 = u * u
            p = 0.5 + u2 * (u2 * (1.0 / 144.0) - 0.125)
            q = u * ((1.0 / 3.0) + u2 * (u2 * (1.0 / 840.0) - (1.0 / 30.0)))
            jc = ops.where(series, dt2 * (cy * p - sy * q), jc_closed)
            js = ops.where(series, dt2 * (sy * p + cy * q), js_closed)

            run = v * dt + 0.5 * dt2 * a  # straight-line arc length
            cols = [
                x + ops.where(turning, v * ic + a * jc, run * cy),
                y + ops.where(turning, v * is_ + a * js, run * sy),
                keep,
                cy1,
                sy1,
                (v + a * dt) * cy1,
                (v + a * dt) * sy1,
            ]

    scalars = [c if i == 2 else ops.reshape(c, c.shape + (1,))
               for i, c in enumerate(cols)]
    return ops.concat(scalars, axis=-1)


def predict(kind: MotionModelKind | str, anchors: ArrayLike, dt: float,
            lat: LatentKinematics | None = None) -> ArrayLike:
    """Advance anchors (..., 10) one step of `dt` seconds under `kind`.

    Tensor anchors produce a Tensor on the autodiff graph; ndarrays stay
    ndarrays. dt must be positive; latents must respect LATENT_BOUND.
    """
    kind = MotionModelKind(kind)
    if not (isinstance(dt, (int, float)) and dt > 0):
        raise ContractError(f"dt must be a positive scalar, got {dt!r}")
    if lat is None:
        lat = LatentKinematics.zeros()
    _check_bound(lat)
    ops = TENSOR_OPS if isinstance(anchors, Tensor) else NUMPY_OPS
    if anchors.shape[-1] != 10:
        raise ShapeError(f"anchors must have last dim 10, got {anchors.shape}")
    return _predict_ops(ops, kind, anchors, float(dt), lat)


def _latent_floats(lat: LatentKinematics):
    out = []
    for name in ("ax", "ay", "accel", "omega"):
        value = getattr(lat, name)
        data = value.data if isinstance(value, Tensor) else value
        out.append(np.asarray(data, dtype=np.float64))
    return out


def integrate_oracle(kind: MotionModelKind | str, anchors: np.ndarray,
                     dt: float, lat: LatentKinematics | None = None,
                     steps: int = 1024) -> np.ndarray:
    """RK4 reference for `predict`, integrating the continuous kinematics.

    cv/ca integrate the component-form ODE (xdot = vx, vxdot = ax); ctrv/ctra
    integrate the speed/heading form (xdot = v cos(theta), thetadot = omega,
    vdot = a). Below OMEGA_EPS the oracle mirrors the straight-line branch
    convention of the closed form: ctrv falls back to the component ODE and
    ctra to a frozen-heading ODE. Heading and the velocity reconstruction are
    algebraic in both formulations and are assembled after integration,
    exactly as the closed form does.
    """
    kind = MotionModelKind(kind)
    if not (isinstance(dt, (int, float)) and dt > 0):
        raise ContractError(f"dt must be a positive scalar, got {dt!r}")
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    if lat is None:
        lat = LatentKinematics.zeros()
    _check_bound(lat)

    anchors = np.asarray(anchors, dtype=np.float64)
    flat = anchors.reshape(-1, 10)
    n = flat.shape[0]
    ax, ay, accel, omega = (np.broadcast_to(f, (n,)).astype(np.float64)
                            for f in _latent_floats(lat))
    h = float(dt) / steps

    def rk4(state: np.ndarray, deriv) -> np.ndarray:
        for _ in range(steps):
            k1 = deriv(state)
            k2 = deriv(state + (h / 2.0) * k1)
            k3 = deriv(state + (h / 2.0) * k2)
            k4 = deriv(state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return state

    out = flat.copy()
    x, y = flat[:, X], flat[:, Y]
    cy, sy = flat[:, COS_YAW], flat[:, SIN_YAW]
    vx, vy = flat[:, VX], flat[:, VY]

    if kind is MotionModelKind.STATIC:
        out[:, VX] = 0.0
        out[:, VY] = 0.0
    elif kind in (MotionModelKind.CV, MotionModelKind.CA):
        a_x = ax if kind is MotionModelKind.CA else np.zeros(n)
        a_y = ay if kind is MotionModelKind.CA else np.zeros(n)

        def deriv(s):
            d = np.empty_like(s)
            d[:, 0] = s[:, 2]
            d[:, 1] = s[:, 3]
            d[:, 2] = a_x
            d[:, 3] = a_y
            return d

        end = rk4(np.stack([x, y, vx, vy], axis=1), deriv)
        out[:, X], out[:, Y] = end[:, 0], end[:, 1]
        out[:, VX], out[:, VY] = end[:, 2], end[:, 3]
    else:
        v0 = np.sqrt(vx * vx + vy * vy)
        a = accel if kind is MotionModelKind.CTRA else np.zeros(n)
        theta0 = np.arctan2(sy, cy)
        turning = np.abs(omega) >= OMEGA_EPS

        # Turning branch: full polar ODE. theta is integrated as an angle
        # here (oracle only); the closed form never leaves the yaw vector.
        def deriv_turn(s):
            d = np.empty_like(s)
            d[:, 0] = s[:, 3] * np.cos(s[:, 2])
            d[:, 1] = s[:, 3] * np.sin(s[:, 2])
            d[:, 2] = omega
            d[:, 3] = a
            return d

        # Straight branch: ctrv advances with the stored velocity components,
        # ctra along the frozen heading.
        def deriv_straight(s):
            d = np.empty_like(s)
            if kind is MotionModelKind.CTRV:
                d[:, 0] = vx
                d[:, 1] = vy
            else:
                d[:, 0] = s[:, 3] * cy
                d[:, 1] = s[:, 3] * sy
            d[:, 2] = 0.0
            d[:, 3] = a
            return d

        start = np.stack([x, y, theta0, v0], axis=1)
        end_t = rk4(start, deriv_turn)
        end_s = rk4(start, deriv_straight)
        end = np.where(turning[:, None], end_t, end_s)
        out[:, X], out[:, Y] = end[:, 0], end[:, 1]

        u = omega * dt
        cu, su = np.cos(u), np.sin(u)
        cy1 = cy * cu - sy * su
        sy1 = sy * cu + cy * su
        v1 = end[:, 3]
        out[:, COS_YAW], out[:, SIN_YAW] = cy1, sy1
        out[:, VX], out[:, VY] = v1 * cy1, v1 * sy1

    return out.reshape(anchors.shape)
