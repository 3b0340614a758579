"""Six-term gap-traversal loss with stop-gradient gating.

Per-step terms (all batched (B,)):
* position: in-plane distance to the aperture center, gated by a stop-gradient
  proximity weight max(1 - |d_gap|, 0) so it acts only within 1 m of the plane
  and contributes no gradient through the distance itself.
* rotation: norm of the vee of the antisymmetric part of R_g^T R_k, same gate.
* velocity: tracking error against the reference velocity along the gap
  normal, gated by the not-yet-passed indicator b.
* alignment: angle between the body x-axis and the bearing to the gap center,
  gated by b; skipped (0) within 1e-6 m of the center.

Sequence terms: mean squared command magnitude and mean squared command rate
over normalized 4-vector commands (thrust divided by m*g).
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .dynamics import ControlCommand
from .errors import GapflowError

ALIGNMENT_GUARD = 1e-6


@dataclass
class LossWeights:
    lambda_p: float = 10.0
    lambda_r: float = 10.0
    lambda_v: float = 0.1
    lambda_f: float = 1.0
    lambda_a: float = 0.01
    lambda_j: float = 0.0001

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise GapflowError(f"loss weight {name} must be non-negative")


@dataclass
class LossBreakdown:
    l_p: dc.Tensor
    l_r: dc.Tensor
    l_v: dc.Tensor
    l_f: dc.Tensor
    l_a: dc.Tensor
    l_j: dc.Tensor
    total: dc.Tensor

    def scalars(self):
        return {k: float(getattr(self, k).value) for k in
                ("l_p", "l_r", "l_v", "l_f", "l_a", "l_j", "total")}


def proximity_gate(rel):
    """Stop-gradient weight max(1 - |d_gap|, 0).

    The plane distance is signed, so the window is symmetric around the plane
    (active within 1 m on both sides, peaking at the crossing)."""
    return dc.stop_gradient(dc.maximum_const(1.0 - dc.absolute(rel.d_gap), 0.0))


def passed_gate(rel):
    """Stop-gradient of the not-yet-passed indicator b."""
    return dc.stop_gradient(dc.Tensor.constant(rel.b))


def position_loss(rel):
    """|p_proj| * SG(max(1 - |d_gap|, 0)); (B,)."""
    return dc.norm(rel.p_proj, axis=-1) * proximity_gate(rel)


def _vee(m):
    # (m32, m13, m21) of a skew-symmetric matrix
    x = dc.take(m, (..., 2, 1))
    y = dc.take(m, (..., 0, 2))
    z = dc.take(m, (..., 1, 0))
    b = x.shape[0]
    return dc.concat([x.reshape((b, 1)), y.reshape((b, 1)), z.reshape((b, 1))], axis=1)


def rotation_loss(r_k, gap_rot, rel):
    """|0.5 vee(R_g^T R_k - R_k^T R_g)| * SG(max(1 - |d_gap|, 0)); (B,)."""
    rg = np.asarray(gap_rot, dtype=np.float64)
    rg_t = dc.Tensor.constant(np.swapaxes(rg, -1, -2) if rg.ndim == 3 else rg.T)
    m = dc.matmul(rg_t, r_k) - dc.matmul(dc.transpose_last(r_k), dc.Tensor.constant(rg))
    return dc.norm(0.5 * _vee(m), axis=-1) * proximity_gate(rel)


def velocity_loss(v_k, v_ref, rel):
    """|v_k - v_ref| * SG(b); zero after crossing; (B,)."""
    return dc.norm(v_k - dc.Tensor.constant(v_ref), axis=-1) * passed_gate(rel)


def alignment_loss(p_k, gap_pos, r_k, rel):
    """arccos(bearing . body_x) * SG(b); (B,).

    Steps within ALIGNMENT_GUARD meters of the gap center contribute 0 (the
    bearing is undefined there)."""
    diff = dc.Tensor.constant(gap_pos) - p_k
    dist = dc.norm(diff, axis=-1)
    safe = dc.maximum_const(dist, ALIGNMENT_GUARD)
    bearing = diff / safe.reshape(safe.shape + (1,))
    body_x = dc.take(r_k, (..., slice(None), 0))
    ang = dc.arccos(dc.reduce_sum(bearing * body_x, axis=-1))
    valid = dc.Tensor.constant((dist.value >= ALIGNMENT_GUARD).astype(np.float64))
    return ang * passed_gate(rel) * valid


def normalized_command(cmd, hover_thrust):
    """Commensurate 4-vector (omega in rad/s, thrust / (m*g)); (B, 4)."""
    c = cmd.c_c * (1.0 / hover_thrust)
    return dc.concat([cmd.omega_c, c.reshape(c.shape + (1,))], axis=1)


def smoothness_losses(commands, dt, hover_thrust=None):
    """(L_a, L_j) over a command sequence, each per-environment (B,).

    Accepts ControlCommand objects (normalized internally; hover_thrust
    required) or pre-normalized (B, 4) tensors.
    """
    if len(commands) < 2:
        raise GapflowError(f"smoothness losses need at least 2 commands, got {len(commands)}")
    if isinstance(commands[0], ControlCommand):
        if hover_thrust is None:
            raise GapflowError("hover_thrust required to normalize raw commands")
        us = [normalized_command(c, hover_thrust) for c in commands]
    else:
        us = list(commands)
    t = len(us)
    acc = dc.reduce_sum(us[0] * us[0], axis=-1)
    for u in us[1:]:
        acc = acc + dc.reduce_sum(u * u, axis=-1)
    l_a = acc * (1.0 / t)
    jerk = None
    for a, b in zip(us[:-1], us[1:]):
        d = (a - b) * (1.0 / dt)
        term = dc.reduce_sum(d * d, axis=-1)
        jerk = term if jerk is None else jerk + term
    l_j = jerk * (1.0 / (t - 1))
    return l_a, l_j


def _horizon_mean(step_terms):
    acc = step_terms[0]
    for t in step_terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(step_terms))


def total_loss(lp_steps, lr_steps, lv_steps, lf_steps, commands, dt, weights,
               hover_thrust=None):
    """Averages the per-step terms over the horizon, batch-means everything,
    and combines with the weights. Returns the full breakdown."""
    l_p = _horizon_mean(lp_steps).mean()
    l_r = _horizon_mean(lr_steps).mean()
    l_v = _horizon_mean(lv_steps).mean()
    l_f = _horizon_mean(lf_steps).mean()
    l_a_env, l_j_env = smoothness_losses(commands, dt, hover_thrust)
    l_a = l_a_env.mean()
    l_j = l_j_env.mean()
    total = (weights.lambda_p * l_p + weights.lambda_r * l_r + weights.lambda_v * l_v
             + weights.lambda_f * l_f + weights.lambda_a * l_a + weights.lambda_j * l_j)
    return LossBreakdown(l_p=l_p, l_r=l_r, l_v=l_v, l_f=l_f, l_a=l_a, l_j=l_j, total=total)
