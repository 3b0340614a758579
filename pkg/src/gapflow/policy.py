"""Vision-based recurrent control policy and the two auxiliary prediction heads.

Forward pass: 3-layer conv stack over the pooled inverse-depth image, linear
projection to the embedding size, fused by elementwise addition with a
projected 9-D partial state (body velocity, second rotation column, target
velocity), one GRU update, and a linear head whose 4 raw outputs map to body
rates (+-omega_max via tanh) and collective thrust ([0, c_max] via the affine
tanh map c_max*(tanh(y)+1)/2).

The auxiliary heads (gap-crossing classifier, traversability predictor) are
single-hidden-layer MLPs reading only the GRU hidden state.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .dynamics import ControlCommand
from .errors import PolicyError


@dataclass(frozen=True)
class PolicyArch:
    in_h: int = 12  # pooled inverse-depth input (height, width)
    in_w: int = 16
    conv_channels: tuple = (32, 64, 128)
    conv_kernels: tuple = (2, 3, 3)
    conv_strides: tuple = (2, 1, 1)
    embed_dim: int = 192
    hidden_dim: int = 192
    state_dim: int = 9
    out_dim: int = 4
    aux_hidden: int = 1024
    negative_slope: float = 0.01

    def conv_padding(self, i):
        # stride-1 layers keep their spatial shape; strided layers are valid-only
        return (self.conv_kernels[i] - 1) // 2 if self.conv_strides[i] == 1 else 0

    def conv_shapes(self):
        """[(channels, h, w)] after each conv layer, starting from the input."""
        shapes = [(1, self.in_h, self.in_w)]
        for i, (c, k, s) in enumerate(zip(self.conv_channels, self.conv_kernels,
                                          self.conv_strides)):
            _, h, w = shapes[-1]
            p = self.conv_padding(i)
            shapes.append((c, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1))
        return shapes

    @property
    def flat_dim(self):
        c, h, w = self.conv_shapes()[-1]
        return c * h * w

    def to_dict(self):
        return {
            "in_h": self.in_h, "in_w": self.in_w,
            "conv_channels": list(self.conv_channels),
            "conv_kernels": list(self.conv_kernels),
            "conv_strides": list(self.conv_strides),
            "embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim,
            "state_dim": self.state_dim, "out_dim": self.out_dim,
            "aux_hidden": self.aux_hidden, "negative_slope": self.negative_slope,
        }

    @staticmethod
    def from_dict(d):
        return PolicyArch(
            in_h=d["in_h"], in_w=d["in_w"],
            conv_channels=tuple(d["conv_channels"]),
            conv_kernels=tuple(d["conv_kernels"]),
            conv_strides=tuple(d["conv_strides"]),
            embed_dim=d["embed_dim"], hidden_dim=d["hidden_dim"],
            state_dim=d["state_dim"], out_dim=d["out_dim"],
            aux_hidden=d["aux_hidden"], negative_slope=d["negative_slope"])


def _param_specs(arch):
    """Ordered (name, shape) list; the order is the checkpoint payload order."""
    specs = []
    in_c = 1
    for i, c in enumerate(arch.conv_channels):
        k = arch.conv_kernels[i]
        specs.append((f"conv{i}_w", (c, in_c, k, k)))
        specs.append((f"conv{i}_b", (c,)))
        in_c = c
    specs.append(("proj_w", (arch.embed_dim, arch.flat_dim)))
    specs.append(("proj_b", (arch.embed_dim,)))
    specs.append(("state_w", (arch.embed_dim, arch.state_dim)))
    specs.append(("state_b", (arch.embed_dim,)))
    h, e = arch.hidden_dim, arch.embed_dim
    for gate in ("r", "z", "n"):
        specs.append((f"gru_w{gate}", (h, e)))
        specs.append((f"gru_u{gate}", (h, h)))
        specs.append((f"gru_b{gate}", (h,)))
    specs.append(("head_w", (arch.out_dim, arch.hidden_dim)))
    specs.append(("head_b", (arch.out_dim,)))
    for head in ("cross", "trav"):
        specs.append((f"{head}_w1", (arch.aux_hidden, arch.hidden_dim)))
        specs.append((f"{head}_b1", (arch.aux_hidden,)))
        specs.append((f"{head}_w2", (1, arch.aux_hidden)))
        specs.append((f"{head}_b2", (1,)))
    return specs


@dataclass
class PolicyParams:
    arch: PolicyArch
    tensors: dict  # name -> np.ndarray, ordered per _param_specs

    def names(self):
        return [n for n, _ in _param_specs(self.arch)]

    def policy_names(self):
        return [n for n in self.names() if not (n.startswith("cross_") or n.startswith("trav_"))]

    def aux_names(self, head=None):
        heads = (head,) if head else ("cross", "trav")
        return [n for n in self.names() if any(n.startswith(h + "_") for h in heads)]

    def copy(self):
        return PolicyParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def policy_hash(self):
        """SHA-256 over the policy (non-aux) tensors, for frozen-phase audits."""
        digest = hashlib.sha256()
        for name in self.policy_names():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.tensors[name], dtype="<f8").tobytes())
        return digest.hexdigest()


def _orthogonal(rng, shape):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diagonal(r))


def init_params(arch, seed, zero=False):
    """Uniform fan-in init for conv/linear, orthogonal GRU recurrent kernels."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_specs(arch):
        if zero:
            tensors[name] = np.zeros(shape)
        elif name.startswith("gru_u"):
            tensors[name] = _orthogonal(rng, shape)
        elif name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, shape)
    return PolicyParams(arch=arch, tensors=tensors)


@dataclass
class ObservationState:
    """Partial state fed to the policy alongside the depth observation."""

    v_body: dc.Tensor  # body-frame velocity, (B, 3)
    r_col2: dc.Tensor  # second column of R, (B, 3)
    v_target: dc.Tensor  # target velocity vector, (B, 3)

    def __post_init__(self):
        norms = np.sqrt((self.r_col2.value ** 2).sum(axis=-1))
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise PolicyError("r_col2 must be unit length (rotation drifted?)")


def reset_hidden(arch, batch=1):
    """The initial (all-zero) recurrent state."""
    return dc.Tensor.constant(np.zeros((batch, arch.hidden_dim)))


def _check_finite(t, layer):
    if not np.all(np.isfinite(t.value)):
        raise PolicyError(f"non-finite activation in {layer}")


def _wrapped(params, tape):
    """Tensor views of the parameters: tape leaves when training, constants otherwise."""
    if tape is None:
        return {k: dc.Tensor.constant(v) for k, v in params.tensors.items()}
    return {k: tape.leaf(v) for k, v in params.tensors.items()}


def _gru_cell(p, x, h, prefix="gru"):
    r = dc.sigmoid(dc.linear(x, p[f"{prefix}_wr"], p[f"{prefix}_br"]) + dc.linear(h, p[f"{prefix}_ur"], None))
    z = dc.sigmoid(dc.linear(x, p[f"{prefix}_wz"], p[f"{prefix}_bz"]) + dc.linear(h, p[f"{prefix}_uz"], None))
    n = dc.tanh(dc.linear(x, p[f"{prefix}_wn"], p[f"{prefix}_bn"]) + r * dc.linear(h, p[f"{prefix}_un"], None))
    return (1.0 - z) * n + z * h


def forward(p, arch, depth, obs, h, limits):
    """One policy step.

    p: tensor dict from wrap_params()/constants; depth: (B, 1, in_h, in_w)
    pooled inverse-depth tensor; h: (B, hidden) recurrent state. Returns the
    mapped ControlCommand and the new hidden state.
    """
    if depth.ndim != 4 or depth.shape[1:] != (1, arch.in_h, arch.in_w):
        raise PolicyError(f"depth input must be (B, 1, {arch.in_h}, {arch.in_w}), "
                          f"got {depth.shape}")
    if h.shape != (depth.shape[0], arch.hidden_dim):
        raise PolicyError(f"hidden state must be (B, {arch.hidden_dim}), got {h.shape}")
    t = depth
    for i in range(len(arch.conv_channels)):
        t = dc.conv2d(t, p[f"conv{i}_w"], p[f"conv{i}_b"],
                      arch.conv_strides[i], arch.conv_padding(i))
        _check_finite(t, f"conv{i}")
        t = dc.leaky_relu(t, arch.negative_slope)
    flat = t.reshape((t.shape[0], arch.flat_dim))
    vis = dc.linear(flat, p["proj_w"], p["proj_b"])
    _check_finite(vis, "visual projection")
    svec = dc.concat([obs.v_body, obs.r_col2, obs.v_target], axis=1)
    semb = dc.linear(svec, p["state_w"], p["state_b"])
    _check_finite(semb, "state projection")
    fused = vis + semb
    h_new = _gru_cell(p, fused, h)
    _check_finite(h_new, "gru")
    y = dc.linear(h_new, p["head_w"], p["head_b"])
    _check_finite(y, "head")
    omega = limits.omega_max * dc.tanh(dc.take(y, (slice(None), slice(0, 3))))
    c = (0.5 * limits.c_max) * (dc.tanh(dc.take(y, (slice(None), 3))) + 1.0)
    return ControlCommand(omega_c=omega, c_c=c), h_new


def aux_logits(p, arch, h, head):
    """Raw pre-sigmoid output of one auxiliary head; (B,) tensor."""
    if head not in ("cross", "trav"):
        raise PolicyError(f"unknown auxiliary head {head!r}")
    z = dc.leaky_relu(dc.linear(h, p[f"{head}_w1"], p[f"{head}_b1"]), arch.negative_slope)
    out = dc.linear(z, p[f"{head}_w2"], p[f"{head}_b2"])
    return out.reshape((h.shape[0],))


def predict_crossing(p, arch, h):
    """Probability that the gap plane has been crossed, per batch row."""
    return dc.sigmoid(aux_logits(p, arch, h, "cross"))


def predict_traversability(p, arch, h):
    """Predicted probability of collision-free traversal, per batch row."""
    return dc.sigmoid(aux_logits(p, arch, h, "trav"))
