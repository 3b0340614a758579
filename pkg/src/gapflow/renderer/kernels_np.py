"""Pure-numpy geometry kernels (fallback backend).

Every formula here is written out component-by-component, in the same
association order as the compiled kernels in _kernels_cy.pyx, so the two
backends produce bit-identical results (the extension is compiled with FP
contraction disabled).
"""

import numpy as np

# Barycentric slack for the watertight-style ray-triangle test.
BARY_EPS = 1e-9
DET_EPS = 1e-12


def render_depth_kernel(vertices, triangles, origin, cam_rot, fx, fy, cx, cy,
                        width, height, d_max, near):
    """Z-depth image (height, width) by casting one ray per pixel center.

    Ray directions have unit camera-forward component, so the intersection
    parameter t is directly the z-depth. No-hit pixels get d_max; hits closer
    than `near` report `near`.
    """
    out = np.full((height, width), d_max)
    m = triangles.shape[0]
    if m == 0:
        return out
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    e1 = v1 - v0
    e2 = v2 - v0
    tv = origin[None, :] - v0
    # q = cross(tvec, e1) and e2.q depend only on the triangle
    qx = tv[:, 1] * e1[:, 2] - tv[:, 2] * e1[:, 1]
    qy = tv[:, 2] * e1[:, 0] - tv[:, 0] * e1[:, 2]
    qz = tv[:, 0] * e1[:, 1] - tv[:, 1] * e1[:, 0]
    te2q = e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz

    ucam = (np.arange(width) + 0.5 - cx) / fx
    vcam = (np.arange(height) + 0.5 - cy) / fy
    dxc, dyc = np.meshgrid(ucam, vcam)
    dw = [None, None, None]
    for i in range(3):
        dw[i] = (cam_rot[i, 0] * dxc + cam_rot[i, 1] * dyc) + cam_rot[i, 2]
    dwx = dw[0].reshape(-1, 1)
    dwy = dw[1].reshape(-1, 1)
    dwz = dw[2].reshape(-1, 1)

    px = dwy * e2[:, 2] - dwz * e2[:, 1]
    py = dwz * e2[:, 0] - dwx * e2[:, 2]
    pz = dwx * e2[:, 1] - dwy * e2[:, 0]
    det = (e1[:, 0] * px + e1[:, 1] * py) + e1[:, 2] * pz
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        uu = ((tv[:, 0] * px + tv[:, 1] * py) + tv[:, 2] * pz) * inv
        vv = ((dwx * qx + dwy * qy) + dwz * qz) * inv
        tt = te2q * inv
        valid = ((np.abs(det) >= DET_EPS)
                 & (uu >= -BARY_EPS) & (uu <= 1.0 + BARY_EPS)
                 & (vv >= -BARY_EPS) & (uu + vv <= 1.0 + BARY_EPS)
                 & (tt > 0.0))
    tt = np.where(valid, tt, np.inf)
    best = tt.min(axis=1).reshape(height, width)
    hit = np.isfinite(best)
    out[hit] = np.where(best[hit] < near, near, best[hit])
    return out


def min_point_triangle_distance(vertices, triangles, point):
    """Minimum distance from a point to a triangle mesh (Ericson closest-point)."""
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    p = point[None, :]

    def dot3(x, y):
        return (x[:, 0] * y[:, 0] + x[:, 1] * y[:, 1]) + x[:, 2] * y[:, 2]

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = dot3(ab, ap)
    d2 = dot3(ac, ap)
    bp = p - b
    d3 = dot3(ab, bp)
    d4 = dot3(ac, bp)
    cp = p - c
    d5 = dot3(ab, cp)
    d6 = dot3(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom

        cand = np.empty((7,) + a.shape)
        cand[0] = a
        cand[1] = b
        cand[2] = a + ab * t_ab[:, None]
        cand[3] = c
        cand[4] = a + ac * t_ac[:, None]
        cand[5] = b + (c - b) * t_bc[:, None]
        cand[6] = a + ab * v_in[:, None] + ac * w_in[:, None]

        conds = np.empty((6, a.shape[0]), dtype=bool)
        conds[0] = (d1 <= 0.0) & (d2 <= 0.0)
        conds[1] = (d3 >= 0.0) & (d4 <= d3)
        conds[2] = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
        conds[3] = (d6 >= 0.0) & (d5 <= d6)
        conds[4] = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
        conds[5] = (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)

    sel = np.full(a.shape[0], 6, dtype=np.intp)
    taken = np.zeros(a.shape[0], dtype=bool)
    for i in range(6):
        pick = conds[i] & ~taken
        sel[pick] = i
        taken |= conds[i]
    closest = cand[sel, np.arange(a.shape[0])]
    d = p - closest
    sq = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
    return float(np.sqrt(sq.min()))
