"""Curve-motion inverse layers that amplify concavity of a level-set region.

A region is the strictly positive set of a scalar score. Background pixels
that fail the disc-average convexity test for some radius mark concave
boundary; a band of width ``dilation`` around them gets speed -1, and the
level set is pushed along that speed with the explicit step
``U + dt * V * |grad U|``.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ielseg import kernels
from ielseg.field import Field, LabelMask


@dataclass(frozen=True)
class CurveMotionConfig:
    dt: float = 0.1
    n_steps: int = 20
    dilation: int = 3
    radii: tuple = (5, 10, 15)

    def __post_init__(self):
        radii = tuple(int(r) for r in self.radii)
        if not radii:
            raise ValueError("radii must be nonempty")
        if list(radii) != sorted(radii) or radii[0] <= 0:
            raise ValueError(f"radii must be positive and ascending, got {radii}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0 or self.dilation < 0:
            raise ValueError("n_steps and dilation must be >= 0")
        object.__setattr__(self, "radii", radii)


@dataclass(frozen=True)
class DiscKernel:
    radius: int
    offsets: tuple

    @property
    def weight(self) -> float:
        return 1.0 / len(self.offsets)


@lru_cache(maxsize=None)
def disc_kernel(r: int) -> DiscKernel:
    """Lattice disc ``{(di, dj): di^2 + dj^2 <= r^2}`` with uniform weight."""
    if r < 1:
        raise ValueError("radius must be >= 1")
    offsets = tuple(
        (di, dj)
        for di in range(-r, r + 1)
        for dj in range(-r, r + 1)
        if di * di + dj * dj <= r * r
    )
    return DiscKernel(r, offsets)


def disc_size(r: int) -> int:
    return sum(2 * math.isqrt(r * r - dy * dy) + 1 for dy in range(-r, r + 1))


def indicator(U: Field, channel: int = 0) -> LabelMask:
    """Binary mask of pixels whose score is strictly positive."""
    return LabelMask((U.values[channel] > 0).astype(np.int64), 2)


def _as_binary(f):
    ids = f.ids if isinstance(f, LabelMask) else np.asarray(f)
    if ids.min(initial=0) < 0 or ids.max(initial=0) > 1:
        raise ValueError("expected a binary mask")
    return ids.astype(np.int32)


def violation_array(f, r):
    """Boolean map of pixels where ``(1 - f) * (g_r * (1 - 2f)) < 0``.

    With ``n`` foreground pixels inside the disc and ``|B_r|`` disc points,
    ``g_r * (1 - 2f) = (|B_r| - 2n) / |B_r|`` (off-grid points count as
    background), so the test reduces to exact integer arithmetic.
    """
    f = np.asarray(f, dtype=np.int32)
    fg = kernels.disc_count(f, r)
    return (f == 0) & (2 * fg > disc_size(r))


def concave_array(f, radii):
    out = np.zeros(np.shape(f), dtype=bool)
    for r in radii:
        out |= violation_array(f, r)
    return out


def dilate_array(c, d):
    if d == 0:
        return np.asarray(c, dtype=bool).copy()
    return kernels.disc_count(np.asarray(c, dtype=np.int32), d) > 0


def convexity_violations(f: LabelMask, r: int) -> LabelMask:
    return LabelMask(violation_array(_as_binary(f), r).astype(np.int64), 2)


def concave_set(f: LabelMask, radii) -> LabelMask:
    """Union of the per-radius violation sets."""
    return LabelMask(concave_array(_as_binary(f), radii).astype(np.int64), 2)


def speed_field(C: LabelMask, d: int, spacing: float = 1.0) -> Field:
    """-1 within Euclidean distance ``d`` (pixels) of ``C``, 0 elsewhere."""
    if d < 0:
        raise ValueError("d must be >= 0")
    band = dilate_array(_as_binary(C), d)
    return Field(np.where(band, -1.0, 0.0), spacing)


def speed_array(score, cfg: CurveMotionConfig):
    """Speed map for a (H, W) score array; dtype follows ``score``."""
    f = (score > 0).astype(np.int32)
    band = dilate_array(concave_array(f, cfg.radii), cfg.dilation)
    return np.where(band, score.dtype.type(-1), score.dtype.type(0))


def curve_step_array(score, cfg: CurveMotionConfig, h=1.0):
    """One explicit step on a (H, W) score; returns (new score, speed used)."""
    v = speed_array(score, cfg)
    if not v.any():
        return score, v
    g = kernels.grad_mag_central(score, h)
    return score + score.dtype.type(cfg.dt) * v * g, v


def curve_motion_iel_step(U: Field, channel: int, cfg: CurveMotionConfig) -> Field:
    """One curve-motion update on ``channel``; the other channels pass through."""
    score, v = curve_step_array(U.values[channel], cfg, U.spacing)
    if not v.any():
        return U
    out = U.values.copy()
    out[channel] = score
    return U.with_values(out)


def run_curve_motion_iels(U: Field, channel: int, cfg: CurveMotionConfig) -> Field:
    for _ in range(cfg.n_steps):
        U = curve_motion_iel_step(U, channel, cfg)
    return U
