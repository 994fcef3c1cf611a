"""Laminar (w-independent) solutions H(z, xi) of the height-function system.

    H_zz = c1 H_z^3,  H(0) = 0,  H(z0) = d,  1 = (Q - 2 F_surface) H_z(z0)

with xi = 1 / H_z(z0).  Closed form:

    a(z)  = sqrt(xi^2 + 2 c1 (z0 - z)),   H_z = 1 / a
    H(z)  = d + (xi - a(z)) / c1
    z0    = d (d c1 + 2 xi) / 2
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ModelParams


def _check_xi(xi):
    if not np.all(np.asarray(xi) > 0):
        raise ValueError(f"xi must be positive, got {xi!r}")


def z0_of_xi(xi: float, params: ModelParams) -> float:
    """Flow-force height of the laminar flow with surface parameter xi."""
    _check_xi(xi)
    return params.d * (params.d * params.c1 + 2.0 * xi) / 2.0


def xi_of_z0(z0: float, params: ModelParams) -> float:
    """Inverse of :func:`z0_of_xi`."""
    return z0 / params.d - params.d * params.c1 / 2.0


def coefficient_a(z, xi: float, params: ModelParams, z0: float | None = None):
    """a(z, xi) = sqrt(xi^2 + 2 c1 (z0 - z)); z0 defaults to z0_of_xi(xi)."""
    _check_xi(xi)
    z0 = z0_of_xi(xi, params) if z0 is None else z0
    z = np.asarray(z, dtype=float)
    slack = 1e-12 * max(z0, 1.0)
    if np.any(z < -slack) or np.any(z > z0 + slack):
        raise ValueError("z outside [0, z0]")
    return np.sqrt(xi * xi + 2.0 * params.c1 * (z0 - np.clip(z, 0.0, z0)))


def coefficient_a_z(z, xi: float, params: ModelParams, z0: float | None = None):
    return -params.c1 / coefficient_a(z, xi, params, z0)


def coefficient_a_xi_fixed_z0(z, xi: float, params: ModelParams, z0: float | None = None):
    """da/dxi holding z0 fixed: xi / a."""
    return xi / coefficient_a(z, xi, params, z0)


def coefficient_a_xi(z, xi: float, params: ModelParams):
    """da/dxi along the laminar family, z0 = z0(xi): (xi + c1 d) / a."""
    return (xi + params.c1 * params.d) / coefficient_a(z, xi, params)


def laminar_height(z, xi: float, params: ModelParams, z0: float | None = None):
    a = coefficient_a(z, xi, params, z0)
    return params.d + (xi - a) / params.c1


@dataclass(frozen=True)
class LaminarProfile:
    xi: float
    z0: float
    z: np.ndarray
    H: np.ndarray
    Hz: np.ndarray
    a: np.ndarray
    Q: float
    params: ModelParams


def laminar_profile(xi: float, N: int, params: ModelParams) -> LaminarProfile:
    """Sample the laminar solution on N + 1 uniform points of [0, z0]."""
    _check_xi(xi)
    if N < 8:
        raise ValueError("N must be at least 8")
    z0 = z0_of_xi(xi, params)
    z = np.linspace(0.0, z0, N + 1)
    a = coefficient_a(z, xi, params, z0)
    H = params.d + (xi - a) / params.c1
    # endpoints exactly: a(0) = xi + c1 d, a(z0) = xi
    H[0], H[-1] = 0.0, params.d
    return LaminarProfile(xi=float(xi), z0=z0, z=z, H=H, Hz=1.0 / a, a=a,
                          Q=params.laminar_head(xi), params=params)


class LaminarCheck(NamedTuple):
    ode_residual: float
    surface_residual: float


def rk4_laminar(profile: LaminarProfile) -> np.ndarray:
    """Integrate H_zz = c1 H_z^3 from z = 0 with classical RK4 on the profile grid."""
    c1 = profile.params.c1
    z = profile.z
    y = np.array([0.0, 1.0 / profile.a[0]])
    out = np.empty_like(z)
    out[0] = y[0]

    def rhs(v):
        return np.array([v[1], c1 * v[1] ** 3])

    for i in range(len(z) - 1):
        h = z[i + 1] - z[i]
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y[0]
    return out


def verify_laminar_ode(profile: LaminarProfile) -> LaminarCheck:
    """Max |H_rk4 - H_closed| and the surface Bernoulli residual.

    The surface residual is |1 - (Q - 2 F_surface) H_z(z0)| with
    F_surface = c3, the potential at the undisturbed surface.
    """
    ode = float(np.max(np.abs(rk4_laminar(profile) - profile.H)))
    p = profile.params
    surface = abs(1.0 - (profile.Q - 2.0 * p.c3) * profile.Hz[-1])
    return LaminarCheck(ode, float(surface))
