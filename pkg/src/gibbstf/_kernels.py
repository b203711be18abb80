"""Compiled inner loops (planar case).

All kernels work on a CSR cell grid: points sorted by cell, ``starts[c]`` is
the first slot of cell ``c`` and ``starts[c + 1]`` one past its last slot.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _cell_coord(v, lo, cell, n):
    c = int((v - lo) / cell)
    if c < 0:
        return 0
    if c >= n:
        return n - 1
    return c


@njit(cache=True)
def count_within(qx, qy, radii, excl, px, py, order, starts, x0, y0, cell, nx, ny):
    """Closed-ball neighbour counts for every query and every radius.

    ``excl[i]`` is the original index of a point to skip for query ``i``
    (or -1).  Returns an array of shape (len(qx), len(radii)).
    """
    m = qx.shape[0]
    nr = radii.shape[0]
    out = np.zeros((m, nr), dtype=np.int64)
    rmax = 0.0
    for k in range(nr):
        if radii[k] > rmax:
            rmax = radii[k]
    reach = int(math.ceil(rmax / cell))
    r2 = radii * radii
    for i in range(m):
        x = qx[i]
        y = qy[i]
        cx = _cell_coord(x, x0, cell, nx)
        cy = _cell_coord(y, y0, cell, ny)
        for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
            for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
                c = gx * ny + gy
                for s in range(starts[c], starts[c + 1]):
                    j = order[s]
                    if j == excl[i]:
                        continue
                    dx = px[j] - x
                    dy = py[j] - y
                    d2 = dx * dx + dy * dy
                    for k in range(nr):
                        if d2 <= r2[k]:
                            out[i, k] += 1
    return out


@njit(cache=True)
def neighbours_of(x, y, r, excl, px, py, order, starts, x0, y0, cell, nx, ny):
    reach = int(math.ceil(r / cell))
    cx = _cell_coord(x, x0, cell, nx)
    cy = _cell_coord(y, y0, cell, ny)
    buf = np.empty(px.shape[0], dtype=np.int64)
    n = 0
    r2 = r * r
    for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
        for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
            c = gx * ny + gy
            for s in range(starts[c], starts[c + 1]):
                j = order[s]
                if j == excl:
                    continue
                dx = px[j] - x
                dy = py[j] - y
                if dx * dx + dy * dy <= r2:
                    buf[n] = j
                    n += 1
    return buf[:n]


@njit(cache=True)
def covered_area(qx, qy, R, res, excl, px, py, order, starts, x0, y0, cell, nx, ny):
    """Area of B(q, R) covered by the other discs, midpoint rule.

    The res x res grid is anchored on the query's bounding box, so the
    result only depends on relative positions.  Queries with no neighbour
    closer than 2R get exactly 0.
    """
    m = qx.shape[0]
    out = np.zeros(m)
    h = 2.0 * R / res
    R2 = R * R
    reach = int(math.ceil(2.0 * R / cell))
    nb = np.empty(px.shape[0], dtype=np.int64)
    for i in range(m):
        x = qx[i]
        y = qy[i]
        cx = _cell_coord(x, x0, cell, nx)
        cy = _cell_coord(y, y0, cell, ny)
        k = 0
        for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
            for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
                c = gx * ny + gy
                for s in range(starts[c], starts[c + 1]):
                    j = order[s]
                    if j == excl[i]:
                        continue
                    dx = px[j] - x
                    dy = py[j] - y
                    if dx * dx + dy * dy < 4.0 * R2:
                        nb[k] = j
                        k += 1
        if k == 0:
            continue
        hits = 0
        for a in range(res):
            u = -R + (a + 0.5) * h
            for b in range(res):
                v = -R + (b + 0.5) * h
                if u * u + v * v > R2:
                    continue
                for t in range(k):
                    j = nb[t]
                    du = x + u - px[j]
                    dv = y + v - py[j]
                    if du * du + dv * dv <= R2:
                        hits += 1
                        break
        out[i] = hits * h * h
    return out


@njit(cache=True)
def uncovered_arc(qx, qy, R, excl, px, py, order, starts, x0, y0, cell, nx, ny):
    """Angle (radians) of the circle C(q, R) lying outside every other disc."""
    m = qx.shape[0]
    out = np.empty(m)
    reach = int(math.ceil(2.0 * R / cell))
    lo = np.empty(2 * px.shape[0] + 2)
    hi = np.empty(2 * px.shape[0] + 2)
    for i in range(m):
        x = qx[i]
        y = qy[i]
        cx = _cell_coord(x, x0, cell, nx)
        cy = _cell_coord(y, y0, cell, ny)
        k = 0
        full = False
        for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
            for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
                c = gx * ny + gy
                for s in range(starts[c], starts[c + 1]):
                    j = order[s]
                    if j == excl[i]:
                        continue
                    dx = px[j] - x
                    dy = py[j] - y
                    d = math.sqrt(dx * dx + dy * dy)
                    if d >= 2.0 * R:
                        continue
                    if d == 0.0:
                        full = True
                        continue
                    phi = math.atan2(dy, dx)
                    half = math.acos(d / (2.0 * R))
                    a = phi - half
                    b = phi + half
                    # normalise into [0, 2pi), splitting at the seam
                    while a < 0.0:
                        a += 2.0 * math.pi
                        b += 2.0 * math.pi
                    while a >= 2.0 * math.pi:
                        a -= 2.0 * math.pi
                        b -= 2.0 * math.pi
                    if b > 2.0 * math.pi:
                        lo[k] = a
                        hi[k] = 2.0 * math.pi
                        k += 1
                        lo[k] = 0.0
                        hi[k] = b - 2.0 * math.pi
                        k += 1
                    else:
                        lo[k] = a
                        hi[k] = b
                        k += 1
        if full:
            out[i] = 0.0
            continue
        if k == 0:
            out[i] = 2.0 * math.pi
            continue
        idx = np.argsort(lo[:k])
        covered = 0.0
        cur_lo = lo[idx[0]]
        cur_hi = hi[idx[0]]
        for t in range(1, k):
            a = lo[idx[t]]
            b = hi[idx[t]]
            if a <= cur_hi:
                if b > cur_hi:
                    cur_hi = b
            else:
                covered += cur_hi - cur_lo
                cur_lo = a
                cur_hi = b
        covered += cur_hi - cur_lo
        free = 2.0 * math.pi - covered
        out[i] = free if free > 0.0 else 0.0
    return out


@njit(cache=True)
def coverage_grid(x0g, y0g, hx, hy, nxg, nyg, R, px, py, order, starts, x0, y0, cell, nx, ny):
    """Number of data points within R of every midpoint of an nxg x nyg grid."""
    out = np.zeros((nxg, nyg), dtype=np.int32)
    R2 = R * R
    reach = int(math.ceil(R / cell))
    for a in range(nxg):
        x = x0g + (a + 0.5) * hx
        cx = _cell_coord(x, x0, cell, nx)
        for b in range(nyg):
            y = y0g + (b + 0.5) * hy
            cy = _cell_coord(y, y0, cell, ny)
            cnt = 0
            for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
                for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
                    c = gx * ny + gy
                    for s in range(starts[c], starts[c + 1]):
                        j = order[s]
                        dx = px[j] - x
                        dy = py[j] - y
                        if dx * dx + dy * dy <= R2:
                            cnt += 1
            out[a, b] = cnt
    return out


# --- birth-death Metropolis-Hastings for counting-statistic models ---------


@njit(cache=True)
def _counts_at(x, y, skip, radii, px, py, cell_items, cell_count, x0, y0, cell, nx, ny, out):
    for k in range(radii.shape[0]):
        out[k] = 0
    rmax = radii[radii.shape[0] - 1]
    reach = int(math.ceil(rmax / cell))
    cx = _cell_coord(x, x0, cell, nx)
    cy = _cell_coord(y, y0, cell, ny)
    for gx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
        for gy in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
            c = gx * ny + gy
            for s in range(cell_count[c]):
                j = cell_items[c, s]
                if j == skip:
                    continue
                dx = px[j] - x
                dy = py[j] - y
                d2 = dx * dx + dy * dy
                for k in range(radii.shape[0]):
                    if d2 <= radii[k] * radii[k]:
                        out[k] += 1


@njit(cache=True)
def mh_counting(
    u, n, px, py, pcell, pslot, cell_items, cell_count,
    theta, radii, lox, loy, wx, wy, x0, y0, cell, nx, ny,
    p_birth, max_points, start,
):
    """Run birth/death steps u[start:] in place; returns (n, status, t).

    Local energy is theta[0] + sum_k theta[k + 1] * n_{radii[k]}(x).
    status: 0 ok, 1 cell overflow, 2 capacity overflow, 3 non-finite energy;
    on a nonzero status ``t`` is the step that could not be applied.
    """
    vol = wx * wy
    cap_cell = cell_items.shape[1]
    cnt = np.zeros(radii.shape[0], dtype=np.int64)
    q_birth = (1.0 - p_birth) / p_birth
    for t in range(start, u.shape[0]):
        if u[t, 0] < p_birth:
            if n >= max_points:
                continue
            x = lox + u[t, 1] * wx
            y = loy + u[t, 2] * wy
            _counts_at(x, y, -1, radii, px, py, cell_items, cell_count, x0, y0, cell, nx, ny, cnt)
            e = theta[0]
            for k in range(radii.shape[0]):
                e += theta[k + 1] * cnt[k]
            if not math.isfinite(e):
                return n, 3, t
            ratio = vol * math.exp(-e) / (n + 1) * q_birth
            if u[t, 3] < ratio:
                if n >= px.shape[0]:
                    return n, 2, t
                c = _cell_coord(x, x0, cell, nx) * ny + _cell_coord(y, y0, cell, ny)
                if cell_count[c] >= cap_cell:
                    return n, 1, t
                px[n] = x
                py[n] = y
                pcell[n] = c
                pslot[n] = cell_count[c]
                cell_items[c, cell_count[c]] = n
                cell_count[c] += 1
                n += 1
        else:
            if n == 0:
                continue
            i = int(u[t, 1] * n)
            if i >= n:
                i = n - 1
            _counts_at(px[i], py[i], i, radii, px, py, cell_items, cell_count, x0, y0, cell, nx, ny, cnt)
            e = theta[0]
            for k in range(radii.shape[0]):
                e += theta[k + 1] * cnt[k]
            if not math.isfinite(e):
                return n, 3, t
            ratio = n / (vol * math.exp(-e)) / q_birth
            if u[t, 3] < ratio:
                # drop i from its cell
                c = pcell[i]
                s = pslot[i]
                last = cell_items[c, cell_count[c] - 1]
                cell_items[c, s] = last
                pslot[last] = s
                cell_count[c] -= 1
                # move the last point into slot i
                n -= 1
                if i != n:
                    px[i] = px[n]
                    py[i] = py[n]
                    c2 = pcell[n]
                    s2 = pslot[n]
                    pcell[i] = c2
                    pslot[i] = s2
                    cell_items[c2, s2] = i
    return n, 0, u.shape[0]
