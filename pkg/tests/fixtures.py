import numpy as np


def l_shape(size=40, thick=12, margin=6):
    """Two overlapping rectangles forming an L; returns (mask, inner corner (row, col))."""
    f = np.zeros((size, size), dtype=np.int64)
    top, left = margin, margin
    bottom, right = size - margin, size - margin
    f[top:bottom, left:left + thick] = 1
    f[bottom - thick:bottom, left:right] = 1
    return f, (bottom - thick - 1, left + thick)


def disc_mask(size=48, radius=12.0):
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    return ((yy - c) ** 2 + (xx - c) ** 2 <= radius**2).astype(np.int64)


def level_set(mask):
    """+1 inside, -1 outside, as a float array."""
    return np.where(mask > 0, 1.0, -1.0)


def smooth_level_set(mask, passes=3):
    """Level set with soft edges so the gradient magnitude is nonzero near the boundary."""
    v = level_set(mask)
    for _ in range(passes):
        p = np.pad(v, 1, mode="edge")
        v = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + 4 * v) / 8
    return v
