"""Numba-compiled ray-casting kernels.

The hot loop lives here: BVH traversal with ordered descent plus a
Möller–Trumbore triangle test (front and back faces both hit). Pixels are
fully independent, so the parallel loop is deterministic for any thread
count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

T_EPS = 1e-9  # minimum hit distance
DET_EPS = 1e-12  # parallel-ray determinant cutoff
STACK_DEPTH = 128


@njit(cache=True, fastmath=False)
def _trace_one(
    ox, oy, oz, dx, dy, dz,
    node_min, node_max, node_left, node_right, node_start, node_count,
    v0, e1, e2,
):
    """Nearest hit for one ray; returns (t, tri_index, bary_u, bary_v)."""
    best_t = np.inf
    best_tri = -1
    best_u = 0.0
    best_v = 0.0

    stack = np.empty(STACK_DEPTH, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]

        # slab test against the node box
        tmin = T_EPS
        tmax = best_t
        ok = True
        for axis in range(3):
            if axis == 0:
                o, d = ox, dx
            elif axis == 1:
                o, d = oy, dy
            else:
                o, d = oz, dz
            bmin = node_min[node, axis]
            bmax = node_max[node, axis]
            if d != 0.0:
                inv = 1.0 / d
                t0 = (bmin - o) * inv
                t1 = (bmax - o) * inv
                if t0 > t1:
                    t0, t1 = t1, t0
                if t0 > tmin:
                    tmin = t0
                if t1 < tmax:
                    tmax = t1
                if tmin > tmax:
                    ok = False
                    break
            elif o < bmin or o > bmax:
                ok = False
                break
        if not ok:
            continue

        count = node_count[node]
        if count > 0:
            start = node_start[node]
            for k in range(start, start + count):
                e1x, e1y, e1z = e1[k, 0], e1[k, 1], e1[k, 2]
                e2x, e2y, e2z = e2[k, 0], e2[k, 1], e2[k, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if det > -DET_EPS and det < DET_EPS:
                    continue
                inv_det = 1.0 / det
                sx = ox - v0[k, 0]
                sy = oy - v0[k, 1]
                sz = oz - v0[k, 2]
                u = (sx * px + sy * py + sz * pz) * inv_det
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * e1z - sz * e1y
                qy = sz * e1x - sx * e1z
                qz = sx * e1y - sy * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv_det
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                if t > T_EPS and t < best_t:
                    best_t = t
                    best_tri = k
                    best_u = u
                    best_v = v
        else:
            # push children, nearer one on top of the stack
            left = node_left[node]
            right = node_right[node]
            dl = _box_entry(ox, oy, oz, dx, dy, dz, node_min, node_max, left, best_t)
            dr = _box_entry(ox, oy, oz, dx, dy, dz, node_min, node_max, right, best_t)
            if dl <= dr:
                if dr < np.inf:
                    stack[top] = right
                    top += 1
                if dl < np.inf:
                    stack[top] = left
                    top += 1
            else:
                if dl < np.inf:
                    stack[top] = left
                    top += 1
                if dr < np.inf:
                    stack[top] = right
                    top += 1
    return best_t, best_tri, best_u, best_v


@njit(cache=True, fastmath=False)
def _box_entry(ox, oy, oz, dx, dy, dz, node_min, node_max, node, t_best):
    """Entry distance of the ray into a node box, inf when missed."""
    tmin = T_EPS
    tmax = t_best
    for axis in range(3):
        if axis == 0:
            o, d = ox, dx
        elif axis == 1:
            o, d = oy, dy
        else:
            o, d = oz, dz
        bmin = node_min[node, axis]
        bmax = node_max[node, axis]
        if d != 0.0:
            inv = 1.0 / d
            t0 = (bmin - o) * inv
            t1 = (bmax - o) * inv
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tmin:
                tmin = t0
            if t1 < tmax:
                tmax = t1
            if tmin > tmax:
                return np.inf
        elif o < bmin or o > bmax:
            return np.inf
    return tmin


@njit(cache=True, parallel=True, fastmath=False)
def trace_rays(
    origins, directions,
    node_min, node_max, node_left, node_right, node_start, node_count,
    v0, e1, e2,
):
    """Trace a batch of rays; each output row is written by exactly one ray."""
    n = origins.shape[0]
    out_t = np.empty(n, np.float64)
    out_tri = np.empty(n, np.int64)
    out_u = np.empty(n, np.float64)
    out_v = np.empty(n, np.float64)
    for i in prange(n):
        t, tri, u, v = _trace_one(
            origins[i, 0], origins[i, 1], origins[i, 2],
            directions[i, 0], directions[i, 1], directions[i, 2],
            node_min, node_max, node_left, node_right, node_start, node_count,
            v0, e1, e2,
        )
        out_t[i] = t
        out_tri[i] = tri
        out_u[i] = u
        out_v[i] = v
    return out_t, out_tri, out_u, out_v
