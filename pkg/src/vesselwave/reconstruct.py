"""Physical fields from a height function, and conservation audits.

With s1 = z_x = -h_w / h_z - int f1 dy and s2 = z_y = 1 / h_z the Bernoulli
relation (u - c)^2 + v^2 + 2 p / rho + 2 F = Q and the definitions
z_x = v (c - u) + int f1 dy, z_y = p / rho + (u - c)^2 give, for alpha = u - c,

    alpha^4 + K alpha^2 - s1^2 = 0,    K = Q - 2 F - 2 s2,

solved pointwise with the no-stagnation root alpha < 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import BodyForceModel, ModelParams
from .nonlinear import Discretization, HeightField, default_force


class ReconstructionError(RuntimeError):
    pass


@dataclass
class PhysicalFields:
    x: np.ndarray          # (nw + 1,)
    y: np.ndarray          # (nw + 1, nz + 1), physical y = h - d
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    omega: np.ndarray      # surface elevation
    Q: float
    p0: float              # mean column flux
    s1: np.ndarray
    s2: np.ndarray
    F: np.ndarray
    c: float
    rho: float


def _grid_derivatives(field: HeightField):
    disc = Discretization(field.nw, field.nz, symmetric=False)
    g = disc.derivatives(field.h[:-1])
    out = {k: np.vstack([v, v[:1]]) for k, v in g.items()}
    return disc, out


def physical_fields(field: HeightField, params: ModelParams | None = None,
                    force: BodyForceModel | None = None) -> PhysicalFields:
    params = field.params if params is None else params
    force = default_force(params) if force is None else force
    _, g = _grid_derivatives(field)
    hz = g["hs"] / field.z0
    if np.any(hz <= 0):
        raise ReconstructionError("h_z <= 0: the field has a stagnation point")
    W = np.broadcast_to(field.w[:, None], field.h.shape)
    y = field.h - params.d
    F = force.potential(W, y)
    s1 = -g["hw"] / hz - force.f1_column_integral(W, y)
    s2 = 1.0 / hz
    K = field.Q - 2.0 * F - 2.0 * s2
    # stable form of (-K + sqrt(K^2 + 4 s1^2)) / 2
    root = np.sqrt(K * K + 4.0 * s1 * s1)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha2 = np.where(K < 0, (root - K) / 2.0, 2.0 * s1 * s1 / (root + K))
    if np.any(~(alpha2 > 0)):
        raise ReconstructionError("alpha^2 <= 0: inversion breaks down (no-stagnation violated)")
    alpha = -np.sqrt(alpha2)
    u = params.c + alpha
    v = -s1 / alpha
    p = params.rho * (s2 - alpha2)
    omega = field.surface - params.d
    p0 = float(np.mean(_column_integrals(alpha, y)[:-1]))
    return PhysicalFields(x=field.w, y=y, u=u, v=v, p=p, omega=omega, Q=field.Q, p0=p0,
                          s1=s1, s2=s2, F=F, c=params.c, rho=params.rho)


def _column_integrals(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.trapezoid(q, y, axis=1)


@dataclass
class Diagnostics:
    bernoulli_variation: float
    bernoulli_head_gap: float
    flow_force_variation: float
    flow_force_gap: float
    flux_variation: float
    divergence: float
    vorticity: float
    stagnation_margin: float
    surface_mean: float
    surface_pressure: float
    round_trip: float

    def as_dict(self) -> dict:
        return asdict(self)


def diagnostics(fields: PhysicalFields, field: HeightField,
                params: ModelParams | None = None) -> Diagnostics:
    """Audit the conservation laws on the mapped grid.

    Column integrals use the trapezoid rule in physical y.  Kinematic
    residuals use d/dx = d/dw - (h_w / h_z) d/dz and d/dy = (1 / h_z) d/dz on
    the computational grid; they are max-norms over nodes at least two rows
    from the walls, where a one-sided stencil is not applied twice.
    """
    params = field.params if params is None else params
    rho, c = fields.rho, fields.c
    alpha = fields.u - c
    B = alpha ** 2 + fields.v ** 2 + 2.0 * fields.p / rho + 2.0 * fields.F
    zcol = _column_integrals(fields.p / rho + alpha ** 2, fields.y)
    pcol = _column_integrals(alpha, fields.y)

    disc, g = _grid_derivatives(field)
    hz = g["hs"] / field.z0
    ratio = g["hw"] / hz

    def grad(q):
        d = disc.derivatives(q[:-1])
        qw = np.vstack([d["hw"], d["hw"][:1]])
        qz = np.vstack([d["hs"], d["hs"][:1]]) / field.z0
        return qw - ratio * qz, qz / hz

    ux, uy = grad(fields.u)
    vx, vy = grad(fields.v)

    s1_back = fields.v * (c - fields.u)
    s2_back = fields.p / rho + alpha ** 2
    trip = max(float(np.max(np.abs(s1_back - fields.s1))),
               float(np.max(np.abs(s2_back - fields.s2))))
    return Diagnostics(
        bernoulli_variation=float(np.ptp(B)),
        bernoulli_head_gap=float(np.max(np.abs(B - fields.Q))),
        flow_force_variation=float(np.ptp(zcol)),
        flow_force_gap=float(np.max(np.abs(zcol - field.z0))),
        flux_variation=float(np.ptp(pcol)),
        divergence=float(np.max(np.abs((ux + vy)[:, 2:-2]))),
        vorticity=float(np.max(np.abs((uy - vx)[:, 2:-2]))),
        stagnation_margin=float(np.min(c - fields.u)),
        surface_mean=float(np.mean(fields.omega[:-1])),
        surface_pressure=float(np.max(np.abs(fields.p[:, -1]))),
        round_trip=trip,
    )


def surface_table(fields: PhysicalFields) -> np.ndarray:
    """Columns x, omega."""
    return np.column_stack([fields.x, fields.omega])


def field_table(fields: PhysicalFields) -> np.ndarray:
    """Columns x, y, u, v, p over all nodes, w-major."""
    X = np.broadcast_to(fields.x[:, None], fields.y.shape)
    return np.column_stack([a.ravel() for a in (X, fields.y, fields.u, fields.v, fields.p)])


__all__ = ["PhysicalFields", "Diagnostics", "ReconstructionError", "physical_fields",
           "diagnostics", "surface_table", "field_table"]
