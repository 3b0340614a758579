# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled geometry kernels (hot path).
#
# Mirrors kernels_np.py operation-for-operation; setup.py disables FP
# contraction so both backends are bit-identical.

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()

DEF BARY_EPS = 1e-9
DEF DET_EPS = 1e-12


def render_depth_kernel(double[:, ::1] vertices, int[:, ::1] triangles,
                        double[::1] origin, double[:, ::1] cam_rot,
                        double fx, double fy, double cx, double cy,
                        int width, int height, double d_max, double near):
    cdef int m = triangles.shape[0]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.full((height, width), d_max)
    if m == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr

    cdef cnp.ndarray[double, ndim=2] pre = np.empty((m, 13))
    cdef double[:, ::1] q = pre
    cdef int k
    cdef int i0, i1, i2
    cdef double v0x, v0y, v0z, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double tvx, tvy, tvz, qx, qy, qz
    for k in range(m):
        i0 = triangles[k, 0]; i1 = triangles[k, 1]; i2 = triangles[k, 2]
        v0x = vertices[i0, 0]; v0y = vertices[i0, 1]; v0z = vertices[i0, 2]
        e1x = vertices[i1, 0] - v0x; e1y = vertices[i1, 1] - v0y; e1z = vertices[i1, 2] - v0z
        e2x = vertices[i2, 0] - v0x; e2y = vertices[i2, 1] - v0y; e2z = vertices[i2, 2] - v0z
        tvx = origin[0] - v0x; tvy = origin[1] - v0y; tvz = origin[2] - v0z
        qx = tvy * e1z - tvz * e1y
        qy = tvz * e1x - tvx * e1z
        qz = tvx * e1y - tvy * e1x
        q[k, 0] = e1x; q[k, 1] = e1y; q[k, 2] = e1z
        q[k, 3] = e2x; q[k, 4] = e2y; q[k, 5] = e2z
        q[k, 6] = tvx; q[k, 7] = tvy; q[k, 8] = tvz
        q[k, 9] = qx; q[k, 10] = qy; q[k, 11] = qz
        q[k, 12] = (e2x * qx + e2y * qy) + e2z * qz

    cdef double r00 = cam_rot[0, 0], r01 = cam_rot[0, 1], r02 = cam_rot[0, 2]
    cdef double r10 = cam_rot[1, 0], r11 = cam_rot[1, 1], r12 = cam_rot[1, 2]
    cdef double r20 = cam_rot[2, 0], r21 = cam_rot[2, 1], r22 = cam_rot[2, 2]

    cdef int u, v
    cdef double dxc, dyc, dwx, dwy, dwz
    cdef double px, py, pz, det, inv, uu, vv, tt, best
    for v in range(height):
        dyc = (v + 0.5 - cy) / fy
        for u in range(width):
            dxc = (u + 0.5 - cx) / fx
            dwx = (r00 * dxc + r01 * dyc) + r02
            dwy = (r10 * dxc + r11 * dyc) + r12
            dwz = (r20 * dxc + r21 * dyc) + r22
            best = INFINITY
            for k in range(m):
                px = dwy * q[k, 5] - dwz * q[k, 4]
                py = dwz * q[k, 3] - dwx * q[k, 5]
                pz = dwx * q[k, 4] - dwy * q[k, 3]
                det = (q[k, 0] * px + q[k, 1] * py) + q[k, 2] * pz
                if fabs(det) < DET_EPS:
                    continue
                inv = 1.0 / det
                uu = ((q[k, 6] * px + q[k, 7] * py) + q[k, 8] * pz) * inv
                if uu < -BARY_EPS or uu > 1.0 + BARY_EPS:
                    continue
                vv = ((dwx * q[k, 9] + dwy * q[k, 10]) + dwz * q[k, 11]) * inv
                if vv < -BARY_EPS or uu + vv > 1.0 + BARY_EPS:
                    continue
                tt = q[k, 12] * inv
                if tt <= 0.0:
                    continue
                if tt < best:
                    best = tt
            if best == INFINITY:
                out[v, u] = d_max
            elif best < near:
                out[v, u] = near
            else:
                out[v, u] = best
    return out_arr


def min_point_triangle_distance(double[:, ::1] vertices, int[:, ::1] triangles,
                                double[::1] point):
    cdef int m = triangles.shape[0]
    cdef double px = point[0], py = point[1], pz = point[2]
    cdef double best = INFINITY
    cdef int k, i0, i1, i2
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double abx, aby, abz, acx, acy, acz
    cdef double apx, apy, apz, bpx, bpy, bpz, cpx, cpy, cpz
    cdef double d1, d2, d3, d4, d5, d6, va, vb, vc
    cdef double t, v, w, qx, qy, qz, dx, dy, dz, sq, denom
    for k in range(m):
        i0 = triangles[k, 0]; i1 = triangles[k, 1]; i2 = triangles[k, 2]
        ax = vertices[i0, 0]; ay = vertices[i0, 1]; az = vertices[i0, 2]
        bx = vertices[i1, 0]; by = vertices[i1, 1]; bz = vertices[i1, 2]
        cx = vertices[i2, 0]; cy = vertices[i2, 1]; cz = vertices[i2, 2]
        abx = bx - ax; aby = by - ay; abz = bz - az
        acx = cx - ax; acy = cy - ay; acz = cz - az
        apx = px - ax; apy = py - ay; apz = pz - az
        d1 = (abx * apx + aby * apy) + abz * apz
        d2 = (acx * apx + acy * apy) + acz * apz
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = (abx * bpx + aby * bpy) + abz * bpz
        d4 = (acx * bpx + acy * bpy) + acz * bpz
        cpx = px - cx; cpy = py - cy; cpz = pz - cz
        d5 = (abx * cpx + aby * cpy) + abz * cpz
        d6 = (acx * cpx + acy * cpy) + acz * cpz
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d1 <= 0.0 and d2 <= 0.0:
            qx = ax; qy = ay; qz = az
        elif d3 >= 0.0 and d4 <= d3:
            qx = bx; qy = by; qz = bz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            t = d1 / (d1 - d3)
            qx = ax + abx * t; qy = ay + aby * t; qz = az + abz * t
        elif d6 >= 0.0 and d5 <= d6:
            qx = cx; qy = cy; qz = cz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            t = d2 / (d2 - d6)
            qx = ax + acx * t; qy = ay + acy * t; qz = az + acz * t
        elif va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
            t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = bx + (cx - bx) * t; qy = by + (cy - by) * t; qz = bz + (cz - bz) * t
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
        dx = px - qx; dy = py - qy; dz = pz - qz
        sq = (dx * dx + dy * dy) + dz * dz
        if sq < best:
            best = sq
    return sqrt(best)
