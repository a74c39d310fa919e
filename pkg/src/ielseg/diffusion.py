"""Forward and inverse heat-diffusion evolution layers."""
import math
from dataclasses import dataclass

import numpy as np

from ielseg import kernels
from ielseg.field import Field


@dataclass(frozen=True)
class DiffusionConfig:
    dt: float = 0.1
    n_layers: int = 10
    spacing: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")


# Array-level versions act on the last two axes of any (..., H, W) float array
# and keep its dtype; the autodiff layer uses them directly.

def fel_array(u, dt, n=1, h=1.0):
    dt = u.dtype.type(dt)
    for _ in range(n):
        u = u + dt * kernels.laplacian(u, h)
    return u


def iel_array(u, dt, n=1, h=1.0):
    dt = u.dtype.type(dt)
    for _ in range(n):
        u = u - dt * kernels.laplacian(u, h)
    return u


def fel_step(U: Field, dt: float) -> Field:
    """One forward explicit-Euler heat step, U + dt * lap(U)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return U.with_values(fel_array(U.values, dt, 1, U.spacing))


def iel_step(U: Field, dt: float) -> Field:
    """One inverse heat step, U - dt * lap(U). Amplifies roughness by design."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return U.with_values(iel_array(U.values, dt, 1, U.spacing))


def apply_iels(U: Field, cfg: DiffusionConfig) -> Field:
    return U.with_values(iel_array(U.values, cfg.dt, cfg.n_layers, U.spacing))


def merged_coeffs(n: int, dt: float) -> list:
    """Coefficients ``C(n, k) * (-dt)**k`` of the single layer equal to ``n`` stacked IELs.

    Raises OverflowError once a binomial coefficient no longer fits in a signed
    64-bit integer.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    coeffs = []
    for k in range(n + 1):
        c = math.comb(n, k)
        if c > np.iinfo(np.int64).max:
            raise OverflowError(f"C({n}, {k}) = {c} exceeds the 64-bit range")
        coeffs.append(float(c) * (-dt) ** k)
    return coeffs


def apply_merged(U: Field, coeffs) -> Field:
    """Evaluate ``sum_k coeffs[k] * lap^k(U)`` by Horner's rule (one Laplacian per coefficient)."""
    if len(coeffs) == 0:
        raise ValueError("coeffs must be nonempty")
    u = U.values.astype(np.float64)
    acc = coeffs[-1] * u
    for c in reversed(coeffs[:-1]):
        acc = c * u + kernels.laplacian(acc, U.spacing)
    return U.with_values(acc)
