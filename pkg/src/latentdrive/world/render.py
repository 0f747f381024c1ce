"""Binary PPM (P6) rendering of BEV frames with trajectory overlays."""

from __future__ import annotations

import math

import numpy as np

from .types import Frame

PALETTE = {
    0: (40, 40, 40),      # free
    1: (90, 90, 95),      # drivable
    2: (205, 70, 60),     # agent
    3: (70, 200, 110),    # ego
}

EXPERT_COLOR = (250, 220, 70)
PRED_COLOR = (80, 150, 250)


def render_frame(frame: Frame, path, cell_size=0.5, trajectories=(), scale=8):
    """Write the raster (y-up) as a P6 pixmap, overlay trajectories as
    filled waypoint cells. ``trajectories``: iterable of (points_world, rgb).
    """
    grid_h, grid_w = frame.bev.shape
    img = np.zeros((grid_h, grid_w, 3), dtype=np.uint8)
    for cls, rgb in PALETTE.items():
        img[frame.bev == cls] = rgb
    for points, rgb in trajectories:
        for x, y in np.asarray(points, dtype=np.float64):
            c = int(math.floor(x / cell_size))
            r = int(math.floor(y / cell_size))
            if 0 <= r < grid_h and 0 <= c < grid_w:
                img[r, c] = rgb
    img = img[::-1]  # row 0 at the top of the image
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())
