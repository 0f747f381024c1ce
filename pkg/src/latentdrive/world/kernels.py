"""Grid-level hot kernels: footprints, collision scans, TTC, corridor raster.

Each kernel exists twice: a loop implementation compiled with numba's
``@njit`` and a vectorized pure-numpy fallback. The fallback is selected by
setting ``DWVA_NO_NUMBA=1`` (or when numba is unavailable); both paths
produce identical results and are compared in ``benchmarks/``.

Footprints are 2x1-cell rectangles: the cell containing the entity center
plus the adjacent cell along the heading's dominant axis. Sub-cell overlap
is deliberately ignored so collision checks are exact on the grid.
"""

from __future__ import annotations

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("DWVA_NO_NUMBA", "0").lower() not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def _jit(f):
        return njit(cache=True)(f)
else:
    def _jit(f):
        return f


def _footprint_py(x, y, heading, cell, grid_h, grid_w):
    """(count, r0, c0, r1, c1) of in-grid footprint cells; count<0 if the
    center cell itself is off-grid."""
    c0 = int(math.floor(x / cell))
    r0 = int(math.floor(y / cell))
    if c0 < 0 or c0 >= grid_w or r0 < 0 or r0 >= grid_h:
        return -1, 0, 0, 0, 0
    dx = math.cos(heading)
    dy = math.sin(heading)
    if abs(dx) >= abs(dy):
        r1 = r0
        c1 = c0 + (1 if dx >= 0.0 else -1)
    else:
        c1 = c0
        r1 = r0 + (1 if dy >= 0.0 else -1)
    if 0 <= r1 < grid_h and 0 <= c1 < grid_w:
        return 2, r0, c0, r1, c1
    return 1, r0, c0, 0, 0


footprint_cells = _jit(_footprint_py)


def _paint_footprints_py(raster, xs, ys, headings, cell, cls):
    grid_h, grid_w = raster.shape
    for i in range(xs.shape[0]):
        n, r0, c0, r1, c1 = _footprint_py(xs[i], ys[i], headings[i], cell, grid_h, grid_w)
        if n >= 1:
            raster[r0, c0] = cls
        if n == 2:
            raster[r1, c1] = cls


if USE_NUMBA:
    @njit(cache=True)
    def paint_footprints(raster, xs, ys, headings, cell, cls):  # noqa: F811
        grid_h, grid_w = raster.shape
        for i in range(xs.shape[0]):
            n, r0, c0, r1, c1 = footprint_cells(xs[i], ys[i], headings[i], cell, grid_h, grid_w)
            if n >= 1:
                raster[r0, c0] = cls
            if n == 2:
                raster[r1, c1] = cls
else:
    paint_footprints = _paint_footprints_py


def _entity_cells(xs, ys, headings, cell, grid_h, grid_w):
    """Vectorized footprint cells: (n, 2, 2) array of (r, c); -1 where absent."""
    c0 = np.floor(np.asarray(xs) / cell).astype(np.int64)
    r0 = np.floor(np.asarray(ys) / cell).astype(np.int64)
    in_grid = (c0 >= 0) & (c0 < grid_w) & (r0 >= 0) & (r0 < grid_h)
    dx = np.cos(headings)
    dy = np.sin(headings)
    along_x = np.abs(dx) >= np.abs(dy)
    c1 = np.where(along_x, c0 + np.where(dx >= 0, 1, -1), c0)
    r1 = np.where(along_x, r0, r0 + np.where(dy >= 0, 1, -1))
    second_ok = in_grid & (c1 >= 0) & (c1 < grid_w) & (r1 >= 0) & (r1 < grid_h)
    cells = np.stack(
        [
            np.stack([np.where(in_grid, r0, -1), np.where(in_grid, c0, -1)], axis=-1),
            np.stack([np.where(second_ok, r1, -1), np.where(second_ok, c1, -1)], axis=-1),
        ],
        axis=-2,
    )
    return cells


def _cells_overlap(a, b):
    """Any shared valid cell between two (2, 2) cell lists."""
    for i in range(2):
        if a[i, 0] < 0:
            continue
        for j in range(2):
            if b[j, 0] < 0:
                continue
            if a[i, 0] == b[j, 0] and a[i, 1] == b[j, 1]:
                return True
    return False


def _first_collision_frame_loop(ego, agents, cell, grid_h, grid_w):
    """First frame index where the ego footprint shares a cell with any
    agent footprint, else -1. ego: (F, 4); agents: (F, A, 4)."""
    n_frames = ego.shape[0]
    n_agents = agents.shape[1]
    for f in range(n_frames):
        ne, er0, ec0, er1, ec1 = _footprint_py(ego[f, 0], ego[f, 1], ego[f, 2], cell, grid_h, grid_w)
        if ne < 1:
            continue
        for a in range(n_agents):
            na, ar0, ac0, ar1, ac1 = _footprint_py(
                agents[f, a, 0], agents[f, a, 1], agents[f, a, 2], cell, grid_h, grid_w
            )
            if na < 1:
                continue
            if er0 == ar0 and ec0 == ac0:
                return f
            if na == 2 and er0 == ar1 and ec0 == ac1:
                return f
            if ne == 2:
                if er1 == ar0 and ec1 == ac0:
                    return f
                if na == 2 and er1 == ar1 and ec1 == ac1:
                    return f
    return -1


if USE_NUMBA:
    @njit(cache=True)
    def first_collision_frame(ego, agents, cell, grid_h, grid_w):  # noqa: F811
        n_frames = ego.shape[0]
        n_agents = agents.shape[1]
        for f in range(n_frames):
            ne, er0, ec0, er1, ec1 = footprint_cells(
                ego[f, 0], ego[f, 1], ego[f, 2], cell, grid_h, grid_w
            )
            if ne < 1:
                continue
            for a in range(n_agents):
                na, ar0, ac0, ar1, ac1 = footprint_cells(
                    agents[f, a, 0], agents[f, a, 1], agents[f, a, 2], cell, grid_h, grid_w
                )
                if na < 1:
                    continue
                if er0 == ar0 and ec0 == ac0:
                    return f
                if na == 2 and er0 == ar1 and ec0 == ac1:
                    return f
                if ne == 2:
                    if er1 == ar0 and ec1 == ac0:
                        return f
                    if na == 2 and er1 == ar1 and ec1 == ac1:
                        return f
        return -1
else:
    def first_collision_frame(ego, agents, cell, grid_h, grid_w):
        n_frames = ego.shape[0]
        if n_frames == 0 or agents.shape[1] == 0:
            return -1
        ec = _entity_cells(ego[:, 0], ego[:, 1], ego[:, 2], cell, grid_h, grid_w)
        ac = _entity_cells(
            agents[..., 0], agents[..., 1], agents[..., 2], cell, grid_h, grid_w
        )
        # (F, 1, 2, 1, 2-coords) vs (F, A, 1, 2, 2-coords)
        same = np.all(ec[:, None, :, None, :] == ac[:, :, None, :, :], axis=-1)
        valid = (ec[:, None, :, None, 0] >= 0) & (ac[:, :, None, :, 0] >= 0)
        hit = np.any(same & valid, axis=(1, 2, 3))
        idx = np.nonzero(hit)[0]
        return int(idx[0]) if idx.size else -1


def _ttc_violation_loop(ego, agents, dt, window, cell, grid_h, grid_w):
    """1 if constant-velocity projection collides at any tau in (0, window),
    probed every dt/2, from any frame; else 0. ego/agents carry (x, y,
    heading, speed) per frame."""
    n_frames = ego.shape[0]
    n_agents = agents.shape[1]
    n_tau = int(window / (0.5 * dt) + 1e-9)
    for f in range(n_frames):
        evx = math.cos(ego[f, 2]) * ego[f, 3]
        evy = math.sin(ego[f, 2]) * ego[f, 3]
        for s in range(1, n_tau):
            tau = 0.5 * dt * s
            ex = ego[f, 0] + evx * tau
            ey = ego[f, 1] + evy * tau
            ne, er0, ec0, er1, ec1 = _footprint_py(ex, ey, ego[f, 2], cell, grid_h, grid_w)
            if ne < 1:
                continue
            for a in range(n_agents):
                ax = agents[f, a, 0] + math.cos(agents[f, a, 2]) * agents[f, a, 3] * tau
                ay = agents[f, a, 1] + math.sin(agents[f, a, 2]) * agents[f, a, 3] * tau
                na, ar0, ac0, ar1, ac1 = _footprint_py(
                    ax, ay, agents[f, a, 2], cell, grid_h, grid_w
                )
                if na < 1:
                    continue
                if er0 == ar0 and ec0 == ac0:
                    return 1
                if na == 2 and er0 == ar1 and ec0 == ac1:
                    return 1
                if ne == 2:
                    if er1 == ar0 and ec1 == ac0:
                        return 1
                    if na == 2 and er1 == ar1 and ec1 == ac1:
                        return 1
    return 0


if USE_NUMBA:
    @njit(cache=True)
    def ttc_violation(ego, agents, dt, window, cell, grid_h, grid_w):  # noqa: F811
        n_frames = ego.shape[0]
        n_agents = agents.shape[1]
        n_tau = int(window / (0.5 * dt) + 1e-9)
        for f in range(n_frames):
            evx = math.cos(ego[f, 2]) * ego[f, 3]
            evy = math.sin(ego[f, 2]) * ego[f, 3]
            for s in range(1, n_tau):
                tau = 0.5 * dt * s
                ex = ego[f, 0] + evx * tau
                ey = ego[f, 1] + evy * tau
                ne, er0, ec0, er1, ec1 = footprint_cells(ex, ey, ego[f, 2], cell, grid_h, grid_w)
                if ne < 1:
                    continue
                for a in range(n_agents):
                    ax = agents[f, a, 0] + math.cos(agents[f, a, 2]) * agents[f, a, 3] * tau
                    ay = agents[f, a, 1] + math.sin(agents[f, a, 2]) * agents[f, a, 3] * tau
                    na, ar0, ac0, ar1, ac1 = footprint_cells(
                        ax, ay, agents[f, a, 2], cell, grid_h, grid_w
                    )
                    if na < 1:
                        continue
                    if er0 == ar0 and ec0 == ac0:
                        return 1
                    if na == 2 and er0 == ar1 and ec0 == ac1:
                        return 1
                    if ne == 2:
                        if er1 == ar0 and ec1 == ac0:
                            return 1
                        if na == 2 and er1 == ar1 and ec1 == ac1:
                            return 1
        return 0
else:
    def ttc_violation(ego, agents, dt, window, cell, grid_h, grid_w):
        if ego.shape[0] == 0 or agents.shape[1] == 0:
            return 0
        n_tau = int(window / (0.5 * dt) + 1e-9)
        taus = 0.5 * dt * np.arange(1, n_tau)
        if taus.size == 0:
            return 0
        ex = ego[:, None, 0] + np.cos(ego[:, None, 2]) * ego[:, None, 3] * taus
        ey = ego[:, None, 1] + np.sin(ego[:, None, 2]) * ego[:, None, 3] * taus
        eh = np.broadcast_to(ego[:, None, 2], ex.shape)
        ax = agents[:, :, None, 0] + np.cos(agents[:, :, None, 2]) * agents[:, :, None, 3] * taus
        ay = agents[:, :, None, 1] + np.sin(agents[:, :, None, 2]) * agents[:, :, None, 3] * taus
        ah = np.broadcast_to(agents[:, :, None, 2], ax.shape)
        ec = _entity_cells(ex, ey, eh, cell, grid_h, grid_w)          # (F, T, 2, 2)
        ac = _entity_cells(ax, ay, ah, cell, grid_h, grid_w)          # (F, A, T, 2, 2)
        same = np.all(ec[:, None, :, :, None, :] == ac[:, :, :, None, :, :], axis=-1)
        valid = (ec[:, None, :, :, None, 0] >= 0) & (ac[:, :, :, None, :, 0] >= 0)
        return int(np.any(same & valid))


def _polyline_progress_loop(pts, qx, qy):
    """Arc length along the polyline of the closest projection of (qx, qy);
    ties break toward the earlier route point (strict < comparison)."""
    best_d2 = 1e300
    best_s = 0.0
    s_acc = 0.0
    for i in range(pts.shape[0] - 1):
        ax, ay = pts[i, 0], pts[i, 1]
        bx, by = pts[i + 1, 0], pts[i + 1, 1]
        vx, vy = bx - ax, by - ay
        seg_len2 = vx * vx + vy * vy
        if seg_len2 > 0.0:
            t = ((qx - ax) * vx + (qy - ay) * vy) / seg_len2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        px, py = ax + t * vx, ay + t * vy
        d2 = (qx - px) * (qx - px) + (qy - py) * (qy - py)
        if d2 < best_d2 - 1e-15:
            best_d2 = d2
            best_s = s_acc + t * math.sqrt(seg_len2)
        s_acc += math.sqrt(seg_len2)
    return best_s


if USE_NUMBA:
    @njit(cache=True)
    def polyline_progress(pts, qx, qy):  # noqa: F811
        best_d2 = 1e300
        best_s = 0.0
        s_acc = 0.0
        for i in range(pts.shape[0] - 1):
            ax, ay = pts[i, 0], pts[i, 1]
            bx, by = pts[i + 1, 0], pts[i + 1, 1]
            vx, vy = bx - ax, by - ay
            seg_len2 = vx * vx + vy * vy
            if seg_len2 > 0.0:
                t = ((qx - ax) * vx + (qy - ay) * vy) / seg_len2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            px, py = ax + t * vx, ay + t * vy
            d2 = (qx - px) * (qx - px) + (qy - py) * (qy - py)
            if d2 < best_d2 - 1e-15:
                best_d2 = d2
                best_s = s_acc + t * math.sqrt(seg_len2)
            s_acc += math.sqrt(seg_len2)
        return best_s
else:
    def polyline_progress(pts, qx, qy):
        a = pts[:-1]
        v = pts[1:] - a
        seg_len2 = (v * v).sum(axis=1)
        seg_len = np.sqrt(seg_len2)
        q = np.array([qx, qy])
        t = np.where(
            seg_len2 > 0.0,
            ((q - a) * v).sum(axis=1) / np.where(seg_len2 > 0.0, seg_len2, 1.0),
            0.0,
        )
        t = np.clip(t, 0.0, 1.0)
        proj = a + t[:, None] * v
        d2 = ((q - proj) ** 2).sum(axis=1)
        s_prefix = np.concatenate([[0.0], np.cumsum(seg_len)])[:-1]
        # strict improvement keeps the earliest segment on exact ties
        best = 0
        best_d2 = 1e300
        for i in range(d2.shape[0]):
            if d2[i] < best_d2 - 1e-15:
                best_d2 = d2[i]
                best = i
        return float(s_prefix[best] + t[best] * seg_len[best])


def _corridor_mask_loop(centerline, half_width, cell, grid_h, grid_w):
    """Boolean drivable mask: cell centers within half_width of the
    centerline polyline."""
    mask = np.zeros((grid_h, grid_w), dtype=np.bool_)
    hw2 = half_width * half_width
    for r in range(grid_h):
        cy = (r + 0.5) * cell
        for c in range(grid_w):
            cx = (c + 0.5) * cell
            best = 1e300
            for i in range(centerline.shape[0] - 1):
                ax, ay = centerline[i, 0], centerline[i, 1]
                vx = centerline[i + 1, 0] - ax
                vy = centerline[i + 1, 1] - ay
                seg_len2 = vx * vx + vy * vy
                if seg_len2 > 0.0:
                    t = ((cx - ax) * vx + (cy - ay) * vy) / seg_len2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                dx = cx - (ax + t * vx)
                dy = cy - (ay + t * vy)
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
            mask[r, c] = best <= hw2
    return mask


if USE_NUMBA:
    corridor_mask = njit(cache=True)(_corridor_mask_loop)
else:
    def corridor_mask(centerline, half_width, cell, grid_h, grid_w):
        ys, xs = np.meshgrid(
            (np.arange(grid_h) + 0.5) * cell,
            (np.arange(grid_w) + 0.5) * cell,
            indexing="ij",
        )
        centers = np.stack([xs.ravel(), ys.ravel()], axis=1)   # (C, 2)
        a = centerline[:-1]
        v = centerline[1:] - a
        seg_len2 = (v * v).sum(axis=1)
        safe = np.where(seg_len2 > 0.0, seg_len2, 1.0)
        diff = centers[:, None, :] - a[None, :, :]
        t = np.clip((diff * v[None, :, :]).sum(axis=2) / safe, 0.0, 1.0)
        t = np.where(seg_len2[None, :] > 0.0, t, 0.0)
        proj = a[None, :, :] + t[..., None] * v[None, :, :]
        d2 = ((centers[:, None, :] - proj) ** 2).sum(axis=2).min(axis=1)
        return (d2 <= half_width * half_width).reshape(grid_h, grid_w)


# plain-python references for the benchmark / cross-checking
REFERENCE_IMPLS = {
    "first_collision_frame": _first_collision_frame_loop,
    "ttc_violation": _ttc_violation_loop,
    "polyline_progress": _polyline_progress_loop,
    "corridor_mask": _corridor_mask_loop,
}
