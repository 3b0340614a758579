"""Discrete-time differentiable CTBR (collective thrust + body rate) quadrotor model.

One step applies, in order: first-order command filters for body rate and
thrust, attitude update through the SO(3) exponential map, thrust/gravity/drag
acceleration, and Euler integration of velocity and position. The filtered
body rate lives in QuadState.omega; the filtered collective thrust is carried
alongside the state by the caller (step returns the updated value).

All state math runs through diffcore tensors, so a rollout on a tape is fully
differentiable w.r.t. the commands.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from .errors import DynamicsError

GRAVITY = 9.81
_E3 = np.array([0.0, 0.0, 1.0])


@dataclass
class DynamicsParams:
    """Identified model constants; tau/k_v may be per-environment arrays."""

    m: float = 0.462  # take-off mass, kg
    g: float = GRAVITY
    k_v: object = 0.1  # linear drag, 1/s
    tau_omega: object = 0.03  # body-rate response time constant, s
    tau_c: object = 0.05  # thrust response time constant, s
    dt: float = 1.0 / 30.0  # control period, s
    omega_max: float = 8.0  # command limit, rad/s
    c_max: float = None  # thrust limit, N; defaults to 3*m*g

    def __post_init__(self):
        if self.c_max is None:
            self.c_max = 3.0 * self.m * self.g
        for name in ("m", "g", "dt", "omega_max", "c_max"):
            if getattr(self, name) <= 0:
                raise DynamicsError(f"{name} must be positive")
        for name in ("k_v", "tau_omega", "tau_c"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise DynamicsError(f"{name} must be positive")
        if self.dt >= min(np.min(np.asarray(self.tau_omega)), np.min(np.asarray(self.tau_c))):
            warnings.warn(f"dt={self.dt} is not below the response time constants; "
                          "the first-order filters will be poorly resolved", stacklevel=2)

    @property
    def hover_thrust(self):
        return self.m * self.g


def stack_params(params_list):
    """Batch per-environment randomized params into one DynamicsParams with
    array-valued tau/k_v (m, g, dt and limits must agree)."""
    base = params_list[0]
    for p in params_list[1:]:
        if (p.m, p.g, p.dt, p.omega_max, p.c_max) != (base.m, base.g, base.dt,
                                                      base.omega_max, base.c_max):
            raise DynamicsError("cannot stack params with differing scalar constants")
    return replace(base,
                   k_v=np.array([p.k_v for p in params_list]),
                   tau_omega=np.array([p.tau_omega for p in params_list]),
                   tau_c=np.array([p.tau_c for p in params_list]))


@dataclass
class QuadState:
    """Rigid-body state; leading batch dims allowed on every field."""

    p: dc.Tensor  # position, m, (..., 3)
    R: dc.Tensor  # rotation world<-body, (..., 3, 3)
    v: dc.Tensor  # velocity, m/s, (..., 3)
    a: dc.Tensor  # acceleration computed at the most recent step, (..., 3)
    omega: dc.Tensor  # filtered body rate, rad/s, (..., 3)

    def map(self, fn):
        return QuadState(fn(self.p), fn(self.R), fn(self.v), fn(self.a), fn(self.omega))

    def tensors(self):
        return (self.p, self.R, self.v, self.a, self.omega)


def hover_state(p=(0.0, 0.0, 1.5), batch=None):
    """Level attitude, zero rates; thrust must be initialized separately."""
    p = np.asarray(p, dtype=np.float64)
    if batch is None:
        return QuadState(dc.Tensor.constant(p), dc.Tensor.constant(np.eye(3)),
                         dc.Tensor.constant(np.zeros(3)), dc.Tensor.constant(np.zeros(3)),
                         dc.Tensor.constant(np.zeros(3)))
    shape = (batch, 3)
    return QuadState(dc.Tensor.constant(np.broadcast_to(p, shape).copy()),
                     dc.Tensor.constant(np.broadcast_to(np.eye(3), (batch, 3, 3)).copy()),
                     dc.Tensor.constant(np.zeros(shape)), dc.Tensor.constant(np.zeros(shape)),
                     dc.Tensor.constant(np.zeros(shape)))


@dataclass
class ControlCommand:
    omega_c: dc.Tensor  # commanded body rates, rad/s, (..., 3)
    c_c: dc.Tensor  # commanded collective thrust, N, (...,)


@dataclass
class GapRelativeState:
    """Quadrotor pose expressed in the gap frame.

    d_gap is the signed distance to the gap plane, positive while approaching
    from the start side and crossing zero at the plane. b is the not-yet-passed
    indicator (1.0 while d_gap > 0), kept as a plain array since it only ever
    enters losses behind stop-gradient.
    """

    d_gap: dc.Tensor  # (...,)
    p_proj: dc.Tensor  # gap-frame (y, z), (..., 2)
    b: np.ndarray  # (...,) float 0/1


def _per_env(value, vec=False):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim and vec:
        return arr[..., None]
    return arr


def clip_command(omega_c, c_c, params):
    """Differentiable soft limits: rates saturate at +-omega_max via tanh,
    thrust maps into (0, c_max) with the midpoint c_max/2 as the fixed point."""
    om = params.omega_max
    cm = params.c_max
    omega = om * dc.tanh(omega_c * (1.0 / om))
    c = (0.5 * cm) * (dc.tanh(c_c * (2.0 / cm) - 1.0) + 1.0)
    return ControlCommand(omega_c=omega, c_c=c)


def step(state, thrust, cmd, params, validate=True):
    """One dynamics step; returns (next_state, next_filtered_thrust)."""
    if validate:
        for name, t in (("p", state.p), ("R", state.R), ("v", state.v),
                        ("omega", state.omega), ("thrust", thrust),
                        ("omega_c", cmd.omega_c), ("c_c", cmd.c_c)):
            if not np.all(np.isfinite(t.value)):
                raise DynamicsError(f"non-finite {name} entering dynamics step")
        if np.any(np.linalg.det(state.R.value) <= 0.0):
            raise DynamicsError("rotation matrix has non-positive determinant")

    dt = params.dt
    aw = np.exp(-dt / np.asarray(params.tau_omega, dtype=np.float64))
    ac = np.exp(-dt / np.asarray(params.tau_c, dtype=np.float64))
    aw_v = _per_env(aw, vec=True)
    kv_v = _per_env(params.k_v, vec=True)

    omega = aw_v * state.omega + (1.0 - aw_v) * cmd.omega_c
    c = ac * thrust + (1.0 - ac) * cmd.c_c

    r_next = dc.matmul(state.R, dc.exp_so3(omega * dt))
    body_z = dc.take(state.R, (..., slice(None), 2))
    c_over_m = dc.reshape(c * (1.0 / params.m), c.shape + (1,))
    a = body_z * c_over_m - dc.Tensor.constant(params.g * _E3) - kv_v * state.v
    v_next = state.v + dt * a
    p_next = state.p + dt * state.v + (0.5 * dt * dt) * a
    return QuadState(p=p_next, R=r_next, v=v_next, a=a, omega=omega), c


def randomize_params(base, seed, low=0.9, high=1.1):
    """Independent uniform scale factors on tau_omega, tau_c, k_v (that order)."""
    rng = np.random.default_rng(seed)
    f = rng.uniform(low, high, 3)
    return replace(base, tau_omega=base.tau_omega * f[0], tau_c=base.tau_c * f[1],
                   k_v=base.k_v * f[2])


def gap_relative(p, gap_pos, gap_rot):
    """Express a (batched) position in the gap frame.

    gap_rot column 0 is the gap normal pointing along the travel direction, so
    an approaching quadrotor has negative gap-frame x; d_gap negates it to be
    positive before the plane.
    """
    rt = dc.Tensor.constant(np.asarray(gap_rot, dtype=np.float64).T)
    local = dc.matvec(rt, p - dc.Tensor.constant(gap_pos))
    d_gap = dc.take(local, (..., 0)) * -1.0
    p_proj = dc.take(local, (..., slice(1, 3)))
    return GapRelativeState(d_gap=d_gap, p_proj=p_proj,
                            b=(d_gap.value > 0.0).astype(np.float64))


def orthonormality_drift(r_values):
    """max-norm of R^T R - I."""
    r = np.asarray(r_values)
    return float(np.max(np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3))))


def nearest_rotation(r_values):
    """Polar decomposition: the closest proper rotation(s) to the input."""
    u, _, vt = np.linalg.svd(np.asarray(r_values, dtype=np.float64))
    det = np.linalg.det(u @ vt)
    fix = np.ones(det.shape + (3,))
    fix[..., 2] = np.sign(det)
    return (u * fix[..., None, :]) @ vt


def reorthonormalize(r, tol=1e-6):
    """Re-project a rotation tensor onto SO(3) when drift exceeds tol.

    The correction is applied as a constant right-multiplication so gradients
    keep flowing through the original R (the fix itself is not differentiated).
    """
    rv = r.value
    if orthonormality_drift(rv) <= tol:
        return r
    target = nearest_rotation(rv)
    correction = np.linalg.solve(rv, target)
    return dc.matmul(r, dc.Tensor.constant(correction))


def so3_log_values(r):
    """Rotation vector of a rotation matrix (plain numpy, used for slerp-style
    interpolation at the crossing instant)."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(tr)
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-7:
        return w  # first order: vee of the antisymmetric part
    if abs(math.pi - theta) < 1e-5:
        # near pi the antisymmetric part vanishes; recover the axis from R+I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = m[:, k] / axis[k]
            axis = axis / np.linalg.norm(axis)
        return theta * axis
    return w * (theta / math.sin(theta))


def geodesic_angle(ra, rb):
    """Angle of the relative rotation between two rotation matrices, radians."""
    m = np.asarray(ra).T @ np.asarray(rb)
    return math.acos(min(1.0, max(-1.0, (np.trace(m) - 1.0) / 2.0)))
