"""Numerical checks for the energy amplification and noisy-label results."""
from dataclasses import dataclass

import numpy as np

from ielseg import kernels
from ielseg.diffusion import fel_array, fel_step, iel_array, iel_step
from ielseg.field import Field, grad_forward


@dataclass(frozen=True)
class EnergyReport:
    energy_in: float
    energy_out: float

    @property
    def ratio(self) -> float:
        if self.energy_in == 0:
            return 1.0 if self.energy_out == 0 else float("inf")
        return self.energy_out / self.energy_in

    @property
    def holds(self) -> bool:
        return self.energy_out >= self.energy_in - 1e-6 * max(1.0, self.energy_in)


def dirichlet_energy(U: Field) -> float:
    """Sum of squared forward differences, accumulated in float64."""
    gx, gy = grad_forward(U)
    x = gx.values.astype(np.float64)
    y = gy.values.astype(np.float64)
    return float(np.sum(x * x) + np.sum(y * y))


def check_energy_amplification(U: Field, dt: float) -> EnergyReport:
    return EnergyReport(dirichlet_energy(U), dirichlet_energy(iel_step(U, dt)))


def reconstruction_residual(U: Field, dt: float) -> float:
    """||U - fel(iel(U))||_2, computed by actually running both steps.

    The steps run in float64 so the O(dt^2) residual is not buried under
    float32 rounding for small dt.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = U.values.astype(np.float64)
    back = fel_array(iel_array(u, dt, 1, U.spacing), dt, 1, U.spacing)
    return float(np.linalg.norm((u - back).ravel()))


def _norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64).ravel()))


def theorem2_gap(U_in: Field, M: Field, M_hat: Field, n: int, dt: float):
    """Both sides of the triangle-inequality chain with the forward map taken
    as ``n`` forward heat steps (Lipschitz constant 1 for ``4 dt / h^2 <= 1/2``).

    Returns ``(lhs, rhs)`` where ``lhs = ||U_in - M||`` and
    ``rhs = ||U_in - fwd(iel^n(U_in))|| + ||iel^n(U_in) - M_hat||``.
    """
    if not (U_in.shape == M.shape == M_hat.shape):
        raise ValueError(f"shape mismatch: {U_in.shape}, {M.shape}, {M_hat.shape}")
    h = U_in.spacing
    u = U_in.values.astype(np.float64)
    out = iel_array(u, dt, n, h)
    recon = fel_array(out, dt, n, h)
    lhs = _norm(u - M.values)
    rhs = _norm(u - recon) + 1.0 * _norm(out - M_hat.values)
    return lhs, rhs


def forward_diffusion(U: Field, n: int, dt: float) -> Field:
    for _ in range(n):
        U = fel_step(U, dt)
    return U


def laplacian_power_norm(U: Field, k: int) -> float:
    u = U.values.astype(np.float64)
    for _ in range(k):
        u = kernels.laplacian(u, U.spacing)
    return _norm(u)
