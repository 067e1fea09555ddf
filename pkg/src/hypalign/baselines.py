"""Reference competitors: explicit single-model alignment, an implicit
query-only aligner, per-model extended Kalman filters, and an interacting
multiple model (IMM) filter.

The filters run a common 7-dim state ``[x, y, z, theta, v, omega, a]`` so the
IMM can mix estimates across models; each model zeroes the components it does
not define after every transition. Observations are what the simulator
perturbs: position, the yaw unit vector and planar velocity — never box size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .align import InstanceBank, yaw_normalize_soft
from .errors import ContractError, NumericalError, ValidationError
from .geometry import (
    COS_YAW,
    EgoTransform,
    SIN_YAW,
    VX,
    VY,
    X,
    Y,
    Z,
    build_augmented,
)
from .motion import LatentKinematics, MotionModelKind, predict
from .tensor import MLP, Tensor, active_ops

ArrayLike = Union[np.ndarray, Tensor]

# filter state layout
SX, SY, SZ, STH, SV, SOM, SA = range(7)
STATE_DIM = 7
OBS_DIM = 7  # [x, y, z, cos(theta), sin(theta), vx, vy]

COV_SYM_TOL = 1e-12
COV_EIG_FLOOR = -1e-10

# Default per-step measurement noise (variances), matching the simulator's
# perturbation scales: sigma_pos 0.3, sigma_yawvec 0.05, sigma_vel 0.2.
DEFAULT_MEASUREMENT_NOISE = np.array(
    [0.09, 0.09, 0.09, 0.0025, 0.0025, 0.04, 0.04])

# Continuous-time process noise intensities per state dim, scaled by dt in Q.
# Dims a model pins to zero get only the floor, keeping its covariance
# honest about what the model can and cannot explain.
_Q_FLOOR = 1e-12
_Q_RATES = {
    "pos": 1e-3,
    "theta": 1e-3,
    "v": 0.05,
    "omega": 0.01,
    "a": 0.05,
}

# state dims each model actively evolves (others are zeroed after predict)
_FREE_DIMS = {
    MotionModelKind.CV: (SX, SY, SZ, STH, SV),
    MotionModelKind.STATIC: (SX, SY, SZ, STH),
    MotionModelKind.CA: (SX, SY, SZ, STH, SV, SA),
    MotionModelKind.CTRV: (SX, SY, SZ, STH, SV, SOM),
    MotionModelKind.CTRA: (SX, SY, SZ, STH, SV, SOM, SA),
}


# -- explicit / implicit single-hypothesis alignment -------------------------------


def single_model_sta(kind: MotionModelKind | str, bank: InstanceBank, dt: float,
                     ego: EgoTransform,
                     lat: LatentKinematics | None = None) -> np.ndarray:
    """One fixed kinematic model plus ego warp; features pass through unchanged.

    Identical primitive sequence to the aligner's hypothesis branch, so an
    M=1 aligner's pre-refine output reproduces this bit for bit when fed the
    same latents.
    """
    aug = build_augmented(ego)
    anchors = bank.anchors.data if isinstance(bank.anchors, Tensor) else np.asarray(bank.anchors)
    pred = predict(kind, anchors, dt, lat)
    return np.matmul(pred, aug.r_aug_t) + aug.t_aug


class ImplicitParams:
    """Learned query-conditioned residual on top of the plain ego warp."""

    def __init__(self, c: int, seed: int):
        if c < 1:
            raise ContractError(f"c must be positive, got {c}")
        rng = np.random.default_rng(seed)
        self.mlp = MLP([c, c, 10], rng)
        self.c = int(c)
        self.seed = int(seed)

    def parameters(self):
        return self.mlp.parameters()

    def named_parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.mlp.layers):
            out[f"mlp.{i}.weight"] = layer.weight
            out[f"mlp.{i}.bias"] = layer.bias
        return out


def implicit_sta(bank: InstanceBank, dt: float, ego: EgoTransform,
                 params: ImplicitParams, ops=None) -> ArrayLike:
    """Ego warp plus an MLP(query) offset — no explicit motion hypothesis.

    `dt` is unused: any time dependence must be carried by the query itself.
    """
    del dt
    ops = ops or active_ops()
    aug = build_augmented(ego)
    anchors = ops.const(bank.anchors)
    queries = ops.const(bank.features)
    warped = ops.matmul(anchors, ops.const(aug.r_aug_t)) + ops.const(aug.t_aug)
    return yaw_normalize_soft(warped + ops.mlp(queries, params.mlp), ops=ops)


# -- extended Kalman filters -------------------------------------------------------


@dataclass(frozen=True)
class KalmanState:
    kind: MotionModelKind
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        kind = MotionModelKind(self.kind)
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (STATE_DIM,) or cov.shape != (STATE_DIM, STATE_DIM):
            raise ValidationError(
                f"state must be ({STATE_DIM},)/({STATE_DIM},{STATE_DIM}), "
                f"got {mean.shape}/{cov.shape}")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise NumericalError("non-finite Kalman state")
        if np.abs(cov - cov.T).max() > COV_SYM_TOL:
            raise ValidationError("covariance is not symmetric within 1e-12")
        w = np.linalg.eigvalsh(cov)
        if w.min() < COV_EIG_FLOOR:
            raise ValidationError(f"covariance has eigenvalue {w.min():.3e} < -1e-10")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def anchor_to_state(anchor: np.ndarray, kind: MotionModelKind | str,
                    cov: np.ndarray | None = None) -> KalmanState:
    a = np.asarray(anchor, dtype=np.float64)
    mean = np.zeros(STATE_DIM)
    mean[SX], mean[SY], mean[SZ] = a[X], a[Y], a[Z]
    mean[STH] = np.arctan2(a[SIN_YAW], a[COS_YAW])
    mean[SV] = float(np.sqrt(a[VX] * a[VX] + a[VY] * a[VY]))
    if cov is None:
        cov = np.diag([0.5, 0.5, 0.5, 0.05, 1.0, 0.01, 0.05])
    return KalmanState(MotionModelKind(kind), mean, np.asarray(cov, dtype=np.float64))


def state_to_anchor(mean: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Rebuild an anchor from a filter mean; box size copied from `template`."""
    out = np.asarray(template, dtype=np.float64).copy()
    out[X], out[Y], out[Z] = mean[SX], mean[SY], mean[SZ]
    out[COS_YAW], out[SIN_YAW] = np.cos(mean[STH]), np.sin(mean[STH])
    out[VX] = mean[SV] * out[COS_YAW]
    out[VY] = mean[SV] * out[SIN_YAW]
    return out


def anchor_to_observation(anchor: np.ndarray) -> np.ndarray:
    a = np.asarray(anchor, dtype=np.float64)
    return np.array([a[X], a[Y], a[Z], a[COS_YAW], a[SIN_YAW], a[VX], a[VY]])


def _transition_mean(kind: MotionModelKind, s: np.ndarray, dt: float) -> np.ndarray:
    """Smooth closed-form state transition (no omega branch: np.sinc is exact
    through zero, so numerical Jacobians stay clean near straight motion)."""
    x, y, z, th, v, om, a = s
    out = s.copy()
    if kind is MotionModelKind.STATIC:
        out[SV] = out[SOM] = out[SA] = 0.0
        return out
    if kind is MotionModelKind.CV:
        om, a = 0.0, 0.0
    elif kind is MotionModelKind.CA:
        om = 0.0
    elif kind is MotionModelKind.CTRV:
        a = 0.0

    u = om * dt
    half = 0.5 * u
    sinc_h = np.sinc(half / np.pi)  # sin(u/2)/(u/2), exactly 1 at u=0
    ic = dt * sinc_h * np.cos(th + half)
    is_ = dt * sinc_h * np.sin(th + half)
    if abs(u) < 1e-3:
        u2 = u * u
        p = 0.5 + u2 * (u2 * (1.0 / 144.0) - 0.125)
        q = u * ((1.0 / 3.0) + u2 * (u2 * (1.0 / 840.0) - (1.0 / 30.0)))
        jc = dt * dt * (np.cos(th) * p - np.sin(th) * q)
        js = dt * dt * (np.sin(th) * p + np.cos(th) * q)
    else:
        jc = dt * dt * (np.sin(th + u) / u - 2.0 * np.sin(half) * np.sin(th + half) / (u * u))
        js = dt * dt * (2.0 * np.sin(half) * np.cos(th + half) / (u * u) - np.cos(th + u) / u)
    out[SX] = x + v * ic + a * jc
    out[SY] = y + v * is_ + a * js
    out[STH] = th + u
    out[SV] = v + a * dt
    free = _FREE_DIMS[kind]
    for d in (SOM, SA):
        if d not in free:
            out[d] = 0.0
    return out


def _transition_jacobian(kind: MotionModelKind, s: np.ndarray, dt: float,
                         h: float = 1e-6) -> np.ndarray:
    f = np.empty((STATE_DIM, STATE_DIM))
    for j in range(STATE_DIM):
        step = h * max(1.0, abs(s[j]))
        hi = s.copy(); hi[j] += step
        lo = s.copy(); lo[j] -= step
        f[:, j] = (_transition_mean(kind, hi, dt) - _transition_mean(kind, lo, dt)) / (2.0 * step)
    return f


def process_noise(kind: MotionModelKind, dt: float,
                  rates: dict | None = None) -> np.ndarray:
    r = dict(_Q_RATES)
    if rates:
        r.update(rates)
    q = np.array([r["pos"], r["pos"], r["pos"], r["theta"],
                  r["v"], r["omega"], r["a"]]) * dt
    free = _FREE_DIMS[MotionModelKind(kind)]
    for d in range(STATE_DIM):
        if d not in free:
            q[d] = _Q_FLOOR
    return np.diag(q)


def kf_predict(state: KalmanState, dt: float,
               q: np.ndarray | None = None) -> KalmanState:
    """EKF time update: first-order linearization around the current mean."""
    if dt <= 0:
        raise ContractError(f"dt must be positive, got {dt}")
    mean = _transition_mean(state.kind, state.mean, dt)
    f = _transition_jacobian(state.kind, state.mean, dt)
    if q is None:
        q = process_noise(state.kind, dt)
    cov = f @ state.cov @ f.T + q
    cov = 0.5 * (cov + cov.T)
    return KalmanState(state.kind, mean, cov)


def _observation_jacobian(mean: np.ndarray) -> np.ndarray:
    th, v = mean[STH], mean[SV]
    c, s = np.cos(th), np.sin(th)
    h = np.zeros((OBS_DIM, STATE_DIM))
    h[0, SX] = h[1, SY] = h[2, SZ] = 1.0
    h[3, STH] = -s
    h[4, STH] = c
    h[5, STH], h[5, SV] = -v * s, c
    h[6, STH], h[6, SV] = v * c, s
    return h


def _observe_mean(mean: np.ndarray) -> np.ndarray:
    th, v = mean[STH], mean[SV]
    c, s = np.cos(th), np.sin(th)
    return np.array([mean[SX], mean[SY], mean[SZ], c, s, v * c, v * s])


def kf_update(state: KalmanState, obs: np.ndarray,
              noise: np.ndarray | None = None) -> tuple[KalmanState, float]:
    """EKF measurement update; returns (state, log-likelihood).

    `noise` is the per-row observation variance; rows set to +inf are dropped
    (zero gain), so partial observations need no special casing. With every
    row infinite the state is returned unchanged with log-likelihood 0.
    """
    obs = np.asarray(obs, dtype=np.float64)
    noise = DEFAULT_MEASUREMENT_NOISE if noise is None else np.asarray(noise, dtype=np.float64)
    if obs.shape != (OBS_DIM,) or noise.shape != (OBS_DIM,):
        raise ContractError(f"obs/noise must be ({OBS_DIM},), got {obs.shape}/{noise.shape}")
    keep = np.isfinite(noise)
    if not keep.any():
        return state, 0.0
    if np.any(noise[keep] <= 0):
        raise ContractError("measurement variances must be positive")

    h_full = _observation_jacobian(state.mean)
    h = h_full[keep]
    z = obs[keep]
    r = np.diag(noise[keep])
    innovation = z - _observe_mean(state.mean)[keep]
    s_mat = h @ state.cov @ h.T + r
    s_mat = 0.5 * (s_mat + s_mat.T)
    sign, logdet = np.linalg.slogdet(s_mat)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericalError(
            f"innovation covariance not positive definite (model {state.kind.value}, "
            f"sign {sign}, logdet {logdet})")
    try:
        solved = np.linalg.solve(s_mat, innovation)
        gain = np.linalg.solve(s_mat, h @ state.cov).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation solve failed: {exc}") from None
    mean = state.mean + gain @ innovation
    i_kh = np.eye(STATE_DIM) - gain @ h
    cov = i_kh @ state.cov @ i_kh.T + gain @ r @ gain.T  # Joseph form
    cov = 0.5 * (cov + cov.T)
    d = int(keep.sum())
    loglik = -0.5 * (innovation @ solved + logdet + d * np.log(2.0 * np.pi))
    if not np.isfinite(loglik):
        raise NumericalError("non-finite innovation likelihood")
    return KalmanState(state.kind, mean, cov), float(loglik)


# -- interacting multiple model ----------------------------------------------------


def default_transition_matrix(m: int, self_prob: float = 0.95) -> np.ndarray:
    """Classical hand-tuned Markov chain: sticky diagonal, uniform leak."""
    if m < 1:
        raise ContractError("need at least one model")
    if not 0.0 < self_prob <= 1.0:
        raise ContractError(f"self_prob must be in (0, 1], got {self_prob}")
    if m == 1:
        return np.ones((1, 1))
    pi = np.full((m, m), (1.0 - self_prob) / (m - 1))
    np.fill_diagonal(pi, self_prob)
    return pi


@dataclass(frozen=True)
class ImmState:
    states: tuple
    mu: np.ndarray
    pi: np.ndarray
    underflow: bool = False

    def __post_init__(self):
        states = tuple(self.states)
        m = len(states)
        mu = np.asarray(self.mu, dtype=np.float64)
        pi = np.asarray(self.pi, dtype=np.float64)
        if m < 1 or not all(isinstance(s, KalmanState) for s in states):
            raise ValidationError("states must be a non-empty tuple of KalmanState")
        if mu.shape != (m,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mu must be a probability {m}-vector, got {mu}")
        if pi.shape != (m, m) or np.any(pi < 0) or np.abs(pi.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValidationError("pi must be row-stochastic")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pi", pi)


def make_imm(anchor: np.ndarray, kinds, pi: np.ndarray | None = None,
             cov: np.ndarray | None = None) -> ImmState:
    kinds = tuple(MotionModelKind(k) for k in kinds)
    states = tuple(anchor_to_state(anchor, k, cov) for k in kinds)
    m = len(kinds)
    if pi is None:
        pi = default_transition_matrix(m)
    return ImmState(states, np.full(m, 1.0 / m), pi)


def imm_step(imm: ImmState, dt: float, obs: np.ndarray,
             noise: np.ndarray | None = None,
             q: np.ndarray | None = None) -> ImmState:
    """One IMM cycle: mix, run every model's EKF, reweigh by likelihood.

    If every model's likelihood underflows to zero the mode probabilities
    fall back to uniform and the returned state is flagged `underflow`.
    """
    m = len(imm.states)
    mu, pi = imm.mu, imm.pi
    c_pred = pi.T @ mu  # prior mode probability after the Markov step
    c_safe = np.where(c_pred > 0.0, c_pred, 1.0)

    means = np.stack([s.mean for s in imm.states])
    mixed = []
    for j in range(m):
        w = pi[:, j] * mu / c_safe[j]
        mean_j = w @ means
        cov_j = np.zeros((STATE_DIM, STATE_DIM))
        for i, s in enumerate(imm.states):
            d = s.mean - mean_j
            cov_j += w[i] * (s.cov + np.outer(d, d))
        cov_j = 0.5 * (cov_j + cov_j.T)
        mixed.append(KalmanState(imm.states[j].kind, mean_j, cov_j))

    new_states = []
    logliks = np.empty(m)
    for j, s in enumerate(mixed):
        pred = kf_predict(s, dt, q=q)
        upd, ll = kf_update(pred, obs, noise)
        new_states.append(upd)
        logliks[j] = ll

    shifted = logliks - logliks.max()
    unnorm = c_pred * np.exp(shifted)
    total = unnorm.sum()
    if not np.isfinite(total) or total <= 0.0:
        return ImmState(tuple(new_states), np.full(m, 1.0 / m), pi, underflow=True)
    return ImmState(tuple(new_states), unnorm / total, pi)


def imm_estimate(imm: ImmState) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched combined mean and covariance."""
    means = np.stack([s.mean for s in imm.states])
    mean = imm.mu @ means
    cov = np.zeros((STATE_DIM, STATE_DIM))
    for w, s in zip(imm.mu, imm.states):
        d = s.mean - mean
        cov += w * (s.cov + np.outer(d, d))
    return mean, 0.5 * (cov + cov.T)
