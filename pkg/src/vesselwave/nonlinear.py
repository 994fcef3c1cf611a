"""Finite-difference solver for the height-function system

    (1 + h_w^2) h_zz - 2 h_z h_w h_wz + h_z^2 h_ww - c1 h_z^3 = 0   in 0 < z < z0,
    1 + h_w^2 - [Q - 2 F(w, h - d)] h_z = 0                        on z = z0,
    h = 0 on z = 0,   (1 / 2 pi) int h(w, z0) dw = d,

on the rescaled rectangle sigma = z / z0 in [0, 1].  Interior rows are
multiplied by z0^2 so that they read in sigma-derivatives.  Solutions are
even in w; the solver works on the half period [0, pi] with reflection.

Along the bifurcating branch the unknowns are the height nodes, the head Q
and the rectangle height z0 (equivalently xi).  The amplitude is fixed by the
projection <h - L*, phi> / <phi, phi> = eps onto the discrete kernel mode
phi = m(sigma) cos w at the discrete onset L*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .laminar import laminar_height, xi_of_z0, z0_of_xi
from .model import BodyForceModel, ModelParams

NEWTON_TOL = 1e-10


class StagnationError(RuntimeError):
    """h_z <= 0 somewhere: the height map folds over."""

    def __init__(self, msg="stagnation breach"):
        super().__init__(msg)


class NewtonError(RuntimeError):
    pass


def default_force(params: ModelParams) -> BodyForceModel:
    return BodyForceModel("constant", c1=params.c1, d=params.d)


# ---------------------------------------------------------------------------
# grids and difference operators

def _w_ops(n: int, dw: float, symmetric: bool):
    """First and second w-differences.  Symmetric: nodes 0..n-1 on [0, pi]
    with even reflection at both ends.  Otherwise periodic on n nodes."""
    if symmetric:
        main = np.full(n, -2.0)
        up = np.ones(n - 1)
        lo = np.ones(n - 1)
        up[0] = 2.0
        lo[-1] = 2.0
        Dww = sp.diags([lo, main, up], [-1, 0, 1], format="lil")
        Dw = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="lil")
        Dw[0, 1] = 0.0
        Dw[n - 1, n - 2] = 0.0
    else:
        e = np.ones(n)
        Dww = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
        Dw = sp.diags([-e[:-1], e[:-1]], [-1, 1], format="lil")
        Dww[0, n - 1] = Dww[n - 1, 0] = 1.0
        Dw[0, n - 1] = -1.0
        Dw[n - 1, 0] = 1.0
    return Dw.tocsr() / (2 * dw), Dww.tocsr() / dw ** 2


def _s_ops(nz: int):
    ds = 1.0 / nz
    n = nz + 1
    Ds = sp.lil_matrix((n, n))
    Dss = sp.lil_matrix((n, n))
    for k in range(1, nz):
        Ds[k, k - 1], Ds[k, k + 1] = -0.5, 0.5
        Dss[k, k - 1], Dss[k, k], Dss[k, k + 1] = 1.0, -2.0, 1.0
    Ds[0, 0], Ds[0, 1], Ds[0, 2] = -1.5, 2.0, -0.5
    Ds[nz, nz], Ds[nz, nz - 1], Ds[nz, nz - 2] = 1.5, -2.0, 0.5
    return Ds.tocsr() / ds, Dss.tocsr() / ds ** 2


@dataclass
class Discretization:
    """Kronecker-product operators on a (w, sigma) node grid, node index j (nz + 1) + k."""

    nw: int
    nz: int
    symmetric: bool = True

    def __post_init__(self):
        if self.nw < 4 or self.nw % 2:
            raise ValueError("nw must be even and >= 4")
        if self.nz < 4:
            raise ValueError("nz must be >= 4")
        self.dw = 2.0 * math.pi / self.nw
        self.ds = 1.0 / self.nz
        if self.symmetric:
            self.w = self.dw * np.arange(self.nw // 2 + 1)
        else:
            self.w = -math.pi + self.dw * np.arange(self.nw)
        self.sigma = np.linspace(0.0, 1.0, self.nz + 1)
        self.shape = (len(self.w), self.nz + 1)
        Dw1, Dww1 = _w_ops(len(self.w), self.dw, self.symmetric)
        Ds1, Dss1 = _s_ops(self.nz)
        Iw = sp.identity(len(self.w), format="csr")
        Is = sp.identity(self.nz + 1, format="csr")
        self.Dw1, self.Dww1, self.Ds1, self.Dss1 = Dw1, Dww1, Ds1, Dss1
        self.Dw = sp.kron(Dw1, Is, format="csr")
        self.Dww = sp.kron(Dww1, Is, format="csr")
        self.Ds = sp.kron(Iw, Ds1, format="csr")
        self.Dss = sp.kron(Iw, Dss1, format="csr")
        self.Dws = sp.kron(Dw1, Ds1, format="csr")
        idx = np.arange(self.shape[0] * self.shape[1]).reshape(self.shape)
        self.interior = idx[:, 1:-1].ravel()
        self.top = idx[:, -1]
        self.unknown = idx[:, 1:].ravel()
        tw = np.ones(len(self.w))
        if self.symmetric:
            tw[[0, -1]] = 0.5
        self.w_weights = tw * self.dw
        ts = np.ones(self.nz + 1)
        ts[[0, -1]] = 0.5
        self.s_weights = ts * self.ds

    def derivatives(self, h: np.ndarray) -> dict:
        v = np.asarray(h, dtype=float).ravel()
        out = {"hw": self.Dw @ v, "hww": self.Dww @ v, "hs": self.Ds @ v,
               "hss": self.Dss @ v, "hws": self.Dws @ v}
        return {k: x.reshape(self.shape) for k, x in out.items()}

    def mean_top(self, h: np.ndarray) -> float:
        top = np.asarray(h)[:, -1]
        if self.symmetric:
            return float(self.w_weights @ top / math.pi)
        return float(np.mean(top))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.w_weights @ (np.asarray(u) * np.asarray(v)) @ self.s_weights)


# ---------------------------------------------------------------------------
# fields

@dataclass
class HeightField:
    """h(w, sigma) on w in [-pi, pi] (nw + 1 nodes, both ends) by sigma in [0, 1]."""

    h: np.ndarray
    Q: float
    z0: float
    params: ModelParams
    eps: float = 0.0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.h.ndim != 2 or self.h.shape[0] % 2 == 0:
            raise ValueError("h must have shape (nw + 1, nz + 1) with nw even")

    @property
    def nw(self) -> int:
        return self.h.shape[0] - 1

    @property
    def nz(self) -> int:
        return self.h.shape[1] - 1

    @property
    def w(self) -> np.ndarray:
        return np.linspace(-math.pi, math.pi, self.nw + 1)

    @property
    def sigma(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nz + 1)

    @property
    def z(self) -> np.ndarray:
        return self.z0 * self.sigma

    @property
    def surface(self) -> np.ndarray:
        return self.h[:, -1]

    def half(self) -> np.ndarray:
        return self.h[self.nw // 2:].copy()

    @classmethod
    def from_half(cls, half: np.ndarray, Q: float, z0: float, params: ModelParams,
                  eps: float = 0.0) -> "HeightField":
        half = np.asarray(half, dtype=float)
        return cls(np.vstack([half[:0:-1], half]), Q, z0, params, eps)

    def w_variation(self) -> float:
        """max over sigma of (max_w h - min_w h)."""
        return float(np.max(np.ptp(self.h, axis=0)))


def laminar_field(xi: float, nw: int, nz: int, params: ModelParams) -> HeightField:
    """Closed-form laminar state sampled on the rectangle."""
    z0 = z0_of_xi(xi, params)
    col = laminar_height(z0 * np.linspace(0.0, 1.0, nz + 1), xi, params, z0)
    col[0], col[-1] = 0.0, params.d
    return HeightField(np.tile(col, (nw + 1, 1)), params.laminar_head(xi), z0, params, 0.0)


# ---------------------------------------------------------------------------
# residual and Jacobian

def _pieces(disc: Discretization, h: np.ndarray, Q: float, z0: float,
            params: ModelParams, force: BodyForceModel, check: bool = True):
    g = disc.derivatives(h)
    if check and np.any(g["hs"] <= 0):
        raise StagnationError()
    c1 = params.c1
    interior = ((1 + g["hw"] ** 2) * g["hss"] - 2 * g["hs"] * g["hw"] * g["hws"]
                + g["hs"] ** 2 * g["hww"] - c1 * g["hs"] ** 3 / z0)
    top_h = h[:, -1]
    w = disc.w
    F = force.potential(w, top_h - params.d)
    f2 = force.f2(w, top_h - params.d)
    top = 1 + g["hw"][:, -1] ** 2 - (Q - 2 * F) * g["hs"][:, -1] / z0
    return g, interior[:, 1:-1], top, F, f2


@dataclass
class ResidualBundle:
    interior: np.ndarray     # in z-derivatives
    top: np.ndarray
    mass: float
    z0: float

    def norm(self, scaled: bool = True) -> float:
        s = self.z0 ** 2 if scaled else 1.0
        return max(float(np.max(np.abs(self.interior))) * s,
                   float(np.max(np.abs(self.top))), abs(self.mass))


def residual(field: HeightField, params: ModelParams | None = None,
             force: BodyForceModel | None = None, check: bool = True) -> ResidualBundle:
    """Residual of the full system on the periodic grid (no evenness assumed).

    Interior values are returned in z-derivatives (the sigma form divided by
    z0^2); they cover interior nodes only and have shape (nw + 1, nz - 1).
    """
    params = field.params if params is None else params
    force = default_force(params) if force is None else force
    disc = Discretization(field.nw, field.nz, symmetric=False)
    h = field.h[:-1]
    _, interior, top, _, _ = _pieces(disc, h, field.Q, field.z0, params, force, check)
    interior = np.vstack([interior, interior[:1]]) / field.z0 ** 2
    top = np.concatenate([top, top[:1]])
    mass = disc.mean_top(h) - params.d
    return ResidualBundle(interior, top, float(mass), field.z0)


def _state_jacobian(disc: Discretization, h, Q, z0, params, force):
    """Jacobian blocks of (interior, top) with respect to all nodes, Q and z0."""
    g, interior, top, F, f2 = _pieces(disc, h, Q, z0, params, force, check=False)
    flat = {k: v.ravel() for k, v in g.items()}
    hw, hww, hs, hss, hws = (flat[k] for k in ("hw", "hww", "hs", "hss", "hws"))
    c1 = params.c1
    D = sp.diags
    dR = (D(1 + hw ** 2) @ disc.Dss + D(2 * hw * hss - 2 * hs * hws) @ disc.Dw
          + D(-2 * hw * hws + 2 * hs * hww - 3 * c1 * hs ** 2 / z0) @ disc.Ds
          - D(2 * hs * hw) @ disc.Dws + D(hs ** 2) @ disc.Dww)
    dR = dR.tocsr()[disc.interior]
    dR_z0 = (c1 * hs ** 3 / z0 ** 2)[disc.interior]
    ti = disc.top
    hs_t = hs[ti]
    dT = (D(2 * hw[ti]) @ disc.Dw[ti] - D((Q - 2 * F) / z0) @ disc.Ds[ti]
          + sp.csr_matrix((2 * f2 * hs_t / z0, (np.arange(len(ti)), ti)),
                          shape=(len(ti), disc.Dw.shape[1])))
    dT_Q = -hs_t / z0
    dT_z0 = (Q - 2 * F) * hs_t / z0 ** 2
    return dR, dR_z0, dT.tocsr(), dT_Q, dT_z0


def assemble_jacobian(field: HeightField, params: ModelParams | None = None,
                      force: BodyForceModel | None = None) -> sp.csr_matrix:
    """Analytic Jacobian of the periodic-grid residual (interior rows in sigma
    form, then top rows, then mass) with respect to the non-bottom height
    nodes (index j nz + k - 1) and Q."""
    params = field.params if params is None else params
    force = default_force(params) if force is None else force
    disc = Discretization(field.nw, field.nz, symmetric=False)
    dR, _, dT, dT_Q, _ = _state_jacobian(disc, field.h[:-1], field.Q, field.z0, params, force)
    mass = sp.csr_matrix((np.full(len(disc.top), 1.0 / field.nw),
                          (np.zeros(len(disc.top), int), disc.top)),
                         shape=(1, dR.shape[1]))
    J = sp.vstack([dR, dT, mass]).tocsc()[:, disc.unknown]
    qcol = np.concatenate([np.zeros(dR.shape[0]), dT_Q, [0.0]])
    return sp.hstack([J, sp.csc_matrix(qcol[:, None])]).tocsr()


# ---------------------------------------------------------------------------
# laminar column and discrete onset

def solve_laminar(z0: float, nz: int, params: ModelParams,
                  force: BodyForceModel | None = None, tol: float = 1e-12):
    """Discrete w-independent solution on the sigma grid for given z0.

    Returns (column h(sigma), Q).  Starts from the closed form and runs Newton
    on the column equations with h(1) = d until the residual or the update
    reaches round-off.
    """
    force = default_force(params) if force is None else force
    _, Dss1 = _s_ops(nz)
    Ds1, _ = _s_ops(nz)
    Ds1, Dss1 = Ds1.toarray(), Dss1.toarray()
    xi = xi_of_z0(z0, params)
    if xi <= 0:
        raise ValueError(f"z0 = {z0} is below the laminar range")
    h = laminar_height(z0 * np.linspace(0, 1, nz + 1), xi, params, z0)
    h[0], h[-1] = 0.0, params.d
    Q = params.laminar_head(xi)
    c1, d = params.c1, params.d
    for _ in range(50):
        hs = Ds1 @ h
        F = float(force.potential(0.0, h[-1] - d))
        f2 = float(force.f2(0.0, h[-1] - d))
        r = np.concatenate([(Dss1 @ h - c1 * hs ** 3 / z0)[1:-1],
                            [1 - (Q - 2 * F) * hs[-1] / z0, h[-1] - d]])
        if np.max(np.abs(r)) <= tol:
            return h, Q
        J = np.zeros((nz + 1, nz + 1))
        J[:nz - 1, :nz] = (Dss1 - 3 * c1 * (hs ** 2)[:, None] * Ds1 / z0)[1:-1, 1:]
        J[nz - 1, :nz] = -(Q - 2 * F) * Ds1[-1, 1:] / z0
        J[nz - 1, nz - 1] += 2 * f2 * hs[-1] / z0
        J[nz - 1, nz] = -hs[-1] / z0
        J[nz, nz - 1] = 1.0
        step = np.linalg.solve(J, -r)
        h[1:] += step[:nz]
        Q += step[nz]
        if np.max(np.abs(step[:nz])) <= 1e-15 * d:
            return h, Q
    raise NewtonError("laminar column solve did not converge")


def _mode_problem(z0, nz, params, force, L, Q):
    """Reduced mode-1 problem A m = nu B m on interior nodes after eliminating
    the top node through the linearised top condition."""
    Ds1, Dss1 = _s_ops(nz)
    Ds1, Dss1 = Ds1.toarray(), Dss1.toarray()
    hs = Ds1 @ L
    F = float(force.potential(0.0, L[-1] - params.d))
    f2 = float(force.f2(0.0, L[-1] - params.d))
    A = (Dss1 - 3 * params.c1 * (hs ** 2)[:, None] * Ds1 / z0)[1:-1, 1:]
    t = -(Q - 2 * F) * Ds1[-1, 1:] / z0
    t[-1] += 2 * f2 * hs[-1] / z0
    # m_N = -(t[:-1] . m_int) / t[-1]
    P = np.vstack([np.eye(nz - 1), -t[:-1] / t[-1]])
    return (A @ P) / (hs[1:-1] ** 2)[:, None], P


def _top_nu(z0, nz, params, force):
    L, Q = solve_laminar(z0, nz, params, force)
    K, P = _mode_problem(z0, nz, params, force, L, Q)
    vals, vecs = np.linalg.eig(K)
    real = np.abs(vals.imag) <= 1e-8 * np.maximum(1.0, np.abs(vals.real))
    i = np.flatnonzero(real)[np.argmax(vals.real[real])]
    return float(vals.real[i]), vecs[:, i].real, P, L, Q


@dataclass
class OnsetData:
    """Discrete bifurcation point: laminar column L*, head Q*, kernel profile m."""

    nw: int
    nz: int
    z0: float
    Q: float
    L: np.ndarray
    m: np.ndarray
    params: ModelParams
    force: BodyForceModel = field(repr=False)

    @property
    def xi(self) -> float:
        return xi_of_z0(self.z0, self.params)

    def laminar(self) -> HeightField:
        return HeightField(np.tile(self.L, (self.nw + 1, 1)), self.Q, self.z0, self.params, 0.0)

    def phi_half(self) -> np.ndarray:
        w = np.linspace(0.0, math.pi, self.nw // 2 + 1)
        return np.cos(w)[:, None] * self.m[None, :]


def discrete_onset(xi_guess: float, nw: int, nz: int, params: ModelParams,
                   force: BodyForceModel | None = None) -> OnsetData:
    """Rectangle height z0 at which the discrete linearisation has a cos w kernel."""
    force = default_force(params) if force is None else force
    dw = 2.0 * math.pi / nw
    target = (2.0 - 2.0 * math.cos(dw)) / dw ** 2
    g = lambda z0: _top_nu(z0, nz, params, force)[0] - target
    z0g = z0_of_xi(xi_guess, params)
    lo, hi = z0g, z0g
    glo = ghi = g(z0g)
    zmin = z0_of_xi(1e-6, params)
    for _ in range(60):
        if glo * ghi < 0:
            break
        lo = max(zmin, lo - 0.02 * (lo - zmin) - 1e-12)
        hi = hi + 0.02 * (hi - zmin) + 1e-12
        glo, ghi = g(lo), g(hi)
    else:
        raise NewtonError("could not bracket the discrete onset")
    z0 = brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    _, vec, P, L, Q = _top_nu(z0, nz, params, force)
    m = np.concatenate([[0.0], P @ vec])
    return OnsetData(nw, nz, float(z0), float(Q), L, m / m[-1], params, force)


# ---------------------------------------------------------------------------
# bordered system on the half period

class _BorderedSystem:
    """Unknowns X = [h nodes with k >= 1, Q, z0]; equations: interior (sigma
    form), top, mass, amplitude."""

    def __init__(self, onset: OnsetData):
        self.onset = onset
        self.params = onset.params
        self.force = onset.force
        self.disc = Discretization(onset.nw, onset.nz, symmetric=True)
        self.Lstar = np.tile(onset.L, (self.disc.shape[0], 1))
        self.phi = onset.phi_half()
        self.phi_norm = self.disc.inner(self.phi, self.phi)
        n = self.disc.shape[0] * self.disc.shape[1]
        self.n_nodes = n
        self.amp_row = (self.disc.w_weights[:, None] * self.disc.s_weights[None, :]
                        * self.phi).ravel() / self.phi_norm
        mass = np.zeros(n)
        mass[self.disc.top] = self.disc.w_weights / math.pi
        self.mass_row = mass

    def pack(self, half: np.ndarray, Q: float, z0: float) -> np.ndarray:
        return np.concatenate([half[:, 1:].ravel(), [Q, z0]])

    def unpack(self, X: np.ndarray):
        nwh, nz1 = self.disc.shape
        h = np.zeros((nwh, nz1))
        h[:, 1:] = X[:-2].reshape(nwh, nz1 - 1)
        return h, X[-2], X[-1]

    def F(self, X: np.ndarray, eps: float) -> np.ndarray:
        h, Q, z0 = self.unpack(X)
        _, interior, top, _, _ = _pieces(self.disc, h, Q, z0, self.params, self.force)
        mass = self.mass_row @ h.ravel() - self.params.d
        amp = self.amp_row @ (h - self.Lstar).ravel() - eps
        return np.concatenate([interior.ravel(), top, [mass, amp]])

    def J(self, X: np.ndarray) -> sp.csc_matrix:
        h, Q, z0 = self.unpack(X)
        dR, dR_z0, dT, dT_Q, dT_z0 = _state_jacobian(self.disc, h, Q, z0, self.params,
                                                     self.force)
        rows = sp.vstack([dR, dT, sp.csr_matrix(self.mass_row), sp.csr_matrix(self.amp_row)])
        rows = rows.tocsc()[:, self.disc.unknown]
        nR = dR.shape[0]
        qcol = np.concatenate([np.zeros(nR), dT_Q, [0.0, 0.0]])
        zcol = np.concatenate([dR_z0, dT_z0, [0.0, 0.0]])
        return sp.hstack([rows, sp.csc_matrix(qcol[:, None]),
                          sp.csc_matrix(zcol[:, None])]).tocsc()

    def field(self, X: np.ndarray, eps: float) -> HeightField:
        h, Q, z0 = self.unpack(X)
        return HeightField.from_half(h, float(Q), float(z0), self.params, eps)


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    history: list[float]


def _newton(fun, jac, X, tol=NEWTON_TOL, maxit=30):
    history = []
    r = fun(X)
    nr = float(np.max(np.abs(r)))
    history.append(nr)
    for it in range(1, maxit + 1):
        if nr <= tol:
            return X, NewtonInfo(it - 1, nr, history)
        step = splu(jac(X)).solve(-r)
        if not np.all(np.isfinite(step)):
            raise NewtonError("singular Newton system")
        lam, breach = 1.0, False
        while lam >= 1.0 / 256:
            Xn = X + lam * step
            try:
                rn = fun(Xn)
            except StagnationError:
                breach = True
                lam *= 0.5
                continue
            nrn = float(np.max(np.abs(rn)))
            if nrn < (1.0 - 1e-4 * lam) * nr or nrn <= tol:
                break
            lam *= 0.5
        else:
            if breach:
                raise StagnationError()
            raise NewtonError(f"line search failed at residual {nr:.3e}")
        X, r, nr = Xn, rn, nrn
        history.append(nr)
    if nr <= tol:
        return X, NewtonInfo(maxit, nr, history)
    raise NewtonError(f"Newton did not converge in {maxit} iterations (residual {nr:.3e})")


def newton_solve(initial: HeightField, eps: float, onset: OnsetData,
                 tol: float = NEWTON_TOL, maxit: int = 30) -> tuple[HeightField, NewtonInfo]:
    """Damped Newton on the bordered system with amplitude ``eps``.

    The residual uses the sigma form of the interior rows.  Raises
    StagnationError if every damped step folds the height map.
    """
    sysm = _BorderedSystem(onset)
    if initial.h.shape != (onset.nw + 1, onset.nz + 1):
        raise ValueError("initial field does not match the onset grid")
    if np.any(sysm.disc.derivatives(initial.half())["hs"] <= 0):
        raise StagnationError()
    X0 = sysm.pack(initial.half(), initial.Q, initial.z0)
    X, info = _newton(lambda X: sysm.F(X, eps), sysm.J, X0, tol, maxit)
    return sysm.field(X, eps), info


def predictor(onset: OnsetData, eps: float) -> HeightField:
    """L* + eps phi."""
    half = np.tile(onset.L, (onset.nw // 2 + 1, 1)) + eps * onset.phi_half()
    return HeightField.from_half(half, onset.Q, onset.z0, onset.params, eps)


# ---------------------------------------------------------------------------
# continuation

BRANCH_COLUMNS = ("step", "eps", "Q", "surf_min", "surf_max", "newton_iters", "residual", "z0")


@dataclass
class BranchRecord:
    step: int
    eps: float
    Q: float
    surf_min: float
    surf_max: float
    newton_iters: int
    residual: float
    z0: float

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in BRANCH_COLUMNS)


@dataclass
class Branch:
    records: list[BranchRecord]
    fields: list[HeightField]
    onset: OnsetData
    arclength_steps: int = 0
    halvings: int = 0

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.eps for r in self.records])

    @property
    def Q(self) -> np.ndarray:
        return np.array([r.Q for r in self.records])


def _record(step, fld: HeightField, info: NewtonInfo) -> BranchRecord:
    s = fld.surface
    return BranchRecord(step, float(fld.eps), float(fld.Q), float(s.min()), float(s.max()),
                        info.iterations, float(info.residual), float(fld.z0))


def _arclength_step(sysm, X1, e1, X0, e0, ds, tol, maxit):
    """Pseudo-arclength corrector with eps as an extra unknown."""
    Y1 = np.append(X1, e1)
    t = Y1 - np.append(X0, e0)
    t /= np.linalg.norm(t)
    Yp = Y1 + ds * t
    n = len(X1)

    def fun(Y):
        return np.append(sysm.F(Y[:n], Y[n]), t @ (Y - Yp))

    def jac(Y):
        J = sysm.J(Y[:n])
        col = np.zeros(J.shape[0])
        col[-1] = -1.0
        return sp.vstack([sp.hstack([J, sp.csc_matrix(col[:, None])]),
                          sp.csr_matrix(t)]).tocsc()

    Y, info = _newton(fun, jac, Yp, tol, maxit)
    return Y[:n], float(Y[n]), info


def continue_branch(xi_star: float, n_steps: int, d_eps: float, params: ModelParams,
                    nw: int = 128, nz: int = 64, force: BodyForceModel | None = None,
                    tol: float = NEWTON_TOL, maxit: int = 30,
                    onset: OnsetData | None = None,
                    eps_values=None) -> Branch:
    """March eps = d_eps, 2 d_eps, ..., n_steps d_eps from the discrete onset
    near xi_star (or through the strictly monotone ``eps_values``).

    Each step uses a secant predictor and Newton.  A failed step is retried as
    a pseudo-arclength step, then by inserting the midpoint target.
    """
    if eps_values is None:
        if n_steps < 1 or d_eps == 0:
            raise ValueError("need n_steps >= 1 and nonzero d_eps")
        targets = [i * d_eps for i in range(1, n_steps + 1)]
    else:
        targets = [float(e) for e in eps_values]
        steps = np.diff([0.0] + targets)
        if not targets or not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("eps_values must be strictly monotone away from 0")
    onset = discrete_onset(xi_star, nw, nz, params, force) if onset is None else onset
    sysm = _BorderedSystem(onset)
    start = onset.laminar()
    Xs = [sysm.pack(start.half(), start.Q, start.z0)]
    r0 = float(np.max(np.abs(sysm.F(Xs[0], 0.0))))
    records = [_record(0, start, NewtonInfo(0, r0, [r0]))]
    fields = [start]
    es = [0.0]
    arc = halv = 0
    pending = list(reversed(targets))
    while pending:
        target = pending[-1]
        if len(Xs) >= 2:
            frac = (target - es[-1]) / (es[-1] - es[-2])
            Xp = Xs[-1] + frac * (Xs[-1] - Xs[-2])
        else:
            Xp = sysm.pack(predictor(onset, target).half(), onset.Q, onset.z0)
        X = None
        try:
            X, info = _newton(lambda X: sysm.F(X, target), sysm.J, Xp, tol, maxit)
            e = target
            pending.pop()
        except (NewtonError, StagnationError) as exc:
            failure = exc
            if len(Xs) >= 2:
                ratio = (target - es[-1]) / (es[-1] - es[-2])
                ds = np.linalg.norm(np.append(Xs[-1] - Xs[-2], es[-1] - es[-2])) * ratio
                try:
                    X, e, info = _arclength_step(sysm, Xs[-1], es[-1], Xs[-2], es[-2], ds,
                                                 tol, maxit)
                    if not (0 < (e - es[-1]) / (target - es[-1]) <= 1):
                        X = None
                    else:
                        arc += 1
                        if e == target:
                            pending.pop()
                except (NewtonError, StagnationError) as exc2:
                    failure = exc2
            if X is None:
                gap = abs(target - es[-1])
                if len(records) == 1 and gap < abs(targets[0]) / 16:
                    raise NewtonError(
                        f"first branch step failed ({failure}); check the kernel and "
                        "transversality at the onset") from failure
                if gap < abs(targets[0]) / 1024:
                    raise NewtonError(f"continuation stalled at eps = {es[-1]:.6g}: {failure}")
                pending.append(0.5 * (es[-1] + target))
                halv += 1
                continue
        fld = sysm.field(X, e)
        Xs.append(X)
        es.append(e)
        fields.append(fld)
        records.append(_record(len(records), fld, info))
    return Branch(records, fields, onset, arc, halv)


# ---------------------------------------------------------------------------
# linearisation checks

def _test_fields(disc: Discretization, z0: float):
    """Smooth fields cos(k w) sigma^n with exact derivatives."""
    W, S = np.meshgrid(disc.w, disc.sigma, indexing="ij")
    out = []
    for k in (0, 1, 2):
        for n in (1, 2, 3):
            c = np.cos(k * W)
            vss = c * n * (n - 1) * S ** (n - 2) if n >= 2 else np.zeros_like(W)
            out.append({"v": c * S ** n, "vs": c * n * S ** (n - 1), "vss": vss,
                        "vww": -k * k * c * S ** n})
    return out


@dataclass
class OperatorCheck:
    jacobian_gap: float            # (i) relative, consistent top coefficient
    jacobian_gap_bare_top: float
    mixed_gap: float               # (ii) fixed z0
    mixed_gap_top_same_sign: float
    mixed_gap_z0_varying: float
    z0_varying_interior_factor: float
    jvp_gap: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def linearized_operator_check(xi: float, params: ModelParams, nw: int = 64, nz: int = 512,
                              delta: float = 1e-4, n_dirs: int = 20,
                              seed: int = 0) -> OperatorCheck:
    """Compare the assembled Jacobian with the analytic linearisation.

    (i) Jacobian at the sampled closed-form laminar state against
        v_zz + H_z^2 v_ww - 3 c1 H_z^2 v_z and (2 c2 / xi) v - (Q - 2 c3) v_z;
    (ii) the centred xi-difference of the Jacobian (z0 fixed) against
        -(2 xi a^-4 v_ww + 6 xi a^-3 a_z v_z) on interior rows and against
        (2 c2 / xi^2) v + v_z for the negated top row; the gap with the top
        row taken at the same sign is reported separately;
    (iii) Jacobian-vector products against centred differences of the
        residual on random directions at a perturbed state.
    Gaps (i)-(ii) are max-norm errors relative to the max-norm of the analytic
    image, taken separately for interior and top rows.
    """
    force = default_force(params)
    disc = Discretization(nw, nz, symmetric=True)
    c1, c2, c3, d = params.c1, params.c2, params.c3, params.d
    z0 = z0_of_xi(xi, params)
    sig = disc.sigma

    def state(x, z0v):
        a = np.sqrt(x * x + 2 * c1 * z0v * (1 - sig))
        col = d + (x - a) / c1
        return np.tile(col, (disc.shape[0], 1)), params.laminar_head(x)

    def apply(x, z0v, tf):
        h, Q = state(x, z0v)
        dR, _, dT, _, _ = _state_jacobian(disc, h, Q, z0v, params, force)
        v = tf["v"].ravel()
        return (dR @ v).reshape(disc.shape[0], -1) / z0v ** 2, dT @ v

    tests = _test_fields(disc, z0)
    a = np.sqrt(xi * xi + 2 * c1 * z0 * (1 - sig))[None, :]
    Hz = 1 / a
    gap_i = gap_p = gap_ii = gap_var = gap_top_sign = 0.0
    for tf in tests:
        vz, vzz = tf["vs"] / z0, tf["vss"] / z0 ** 2
        G_int = (vzz + Hz ** 2 * tf["vww"] - 3 * c1 * Hz ** 2 * vz)[:, 1:-1]
        G_top = (2 * c2 / xi) * tf["v"][:, -1] - (params.laminar_head(xi) - 2 * c3) * vz[:, -1]
        P_top = (2 * c2 / xi) * tf["v"][:, -1] - (xi - 2 * c3) * vz[:, -1]
        J_int, J_top = apply(xi, z0, tf)
        gap_i = max(gap_i, _rel(J_int, G_int), _rel(J_top, G_top))
        gap_p = max(gap_p, _rel(P_top, G_top))

        az = -c1 / a
        X_int = -(2 * xi * a ** -4 * tf["vww"] + 6 * xi * a ** -3 * az * vz)[:, 1:-1]
        X_top = (2 * c2 / xi ** 2) * tf["v"][:, -1] + vz[:, -1]
        ip, tp = apply(xi + delta, z0, tf)
        im, tm = apply(xi - delta, z0, tf)
        N_int, N_top = (ip - im) / (2 * delta), (tp - tm) / (2 * delta)
        # the boundary part is the xi-derivative of the negated top row
        gap_ii = max(gap_ii, _rel(N_int, X_int), _rel(-N_top, X_top))
        gap_top_sign = max(gap_top_sign, _rel(N_top, X_top))
        # with z0 = z0(xi) the interior coefficient derivative carries the
        # factor (xi + c1 d) / xi; the top row is unchanged
        if np.any(X_int):
            gap_var = max(gap_var, c1 * d / xi)

    jvp = _jvp_gap(xi, params, nw=min(nw, 32), nz=min(nz, 32), n_dirs=n_dirs, seed=seed)
    return OperatorCheck(float(gap_i), float(gap_p), float(gap_ii), float(gap_top_sign),
                         float(gap_var),
                         float((xi + c1 * d) / xi), float(jvp))


def _rel(num, ref) -> float:
    scale = float(np.max(np.abs(ref)))
    if scale == 0:
        return float(np.max(np.abs(num)))
    return float(np.max(np.abs(num - ref))) / scale


def _jvp_gap(xi, params, nw, nz, n_dirs, seed):
    onset_like = OnsetData(nw, nz, z0_of_xi(xi, params), params.laminar_head(xi),
                           laminar_height(z0_of_xi(xi, params) * np.linspace(0, 1, nz + 1),
                                          xi, params),
                           np.linspace(0, 1, nz + 1) ** 2, params, default_force(params))
    sysm = _BorderedSystem(onset_like)
    rng = np.random.default_rng(seed)
    W, S = np.meshgrid(sysm.disc.w, sysm.disc.sigma, indexing="ij")
    h = sysm.Lstar + 0.05 * params.d * np.cos(W) * np.sin(np.pi * S / 2) ** 2
    X = sysm.pack(h, onset_like.Q * 1.01, onset_like.z0 * 0.99)
    J = sysm.J(X)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(X.size)
        v *= np.abs(X).max() / np.abs(v).max()
        t = 1e-6
        fd = (sysm.F(X + t * v, 0.0) - sysm.F(X - t * v, 0.0)) / (2 * t)
        jv = J @ v
        worst = max(worst, np.linalg.norm(jv - fd) / np.linalg.norm(jv))
    return worst
