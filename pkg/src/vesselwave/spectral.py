"""Linearised Sturm-Liouville problem about the laminar flow.

For the Fourier mode cos(k w) the perturbation M(z) satisfies

    (a^3 M_z)_z = -mu a M     on (0, z0),
    M(0) = 0,   M_z(z0) = beta M(z0),

and a nontrivial mode-k perturbation exists iff mu = -k^2 is an eigenvalue.
The lowest eigenvalue mu(xi) is the infimum of the Rayleigh quotient

    [int a^3 zeta_z^2 - beta a^3(z0) zeta(z0)^2] / int a zeta^2.

beta = c2 / (xi (Q/2 - c3)).  With the laminar head Q = xi + 2 c3 this is
2 c2 / xi^2 ("consistent"); substituting Q = xi gives the "bare" variant
c2 / (xi (xi/2 - c3)), kept for comparison.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from .laminar import coefficient_a, z0_of_xi
from .model import ModelParams

CONVENTIONS = ("consistent", "bare")
ROOT_TOL = 1e-10


class NoCrossingError(RuntimeError):
    """mu(xi) + 1 does not change sign on the scanned interval."""


class ShootingError(RuntimeError):
    pass


def boundary_coefficient(xi: float, params: ModelParams, convention: str = "consistent",
                         Q: float | None = None) -> float:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    if Q is None:
        Q = params.laminar_head(xi) if convention == "consistent" else xi
    denom = xi * (Q / 2.0 - params.c3)
    if denom <= 0:
        raise ValueError(f"boundary coefficient undefined: xi (Q/2 - c3) = {denom:.6g} <= 0")
    return params.c2 / denom


@dataclass(frozen=True)
class SLProblem:
    xi: float
    beta: float
    z0: float
    params: ModelParams
    N: int = 1024
    k: int = 1

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("mode number k must be >= 0")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.z0, self.N + 1)

    def a(self, z):
        return coefficient_a(z, self.xi, self.params, self.z0)


def sl_problem(xi: float, params: ModelParams, N: int = 1024, k: int = 1,
               beta: float | None = None, convention: str = "consistent") -> SLProblem:
    if beta is None:
        beta = boundary_coefficient(xi, params, convention)
    return SLProblem(xi=float(xi), beta=float(beta), z0=z0_of_xi(xi, params),
                     params=params, N=int(N), k=int(k))


@dataclass
class EigenResult:
    mu: float
    z: np.ndarray
    M: np.ndarray
    Mz: np.ndarray
    method: str
    residual: float
    mu_raw: float = math.nan
    evaluate: Callable | None = field(default=None, repr=False)

    def boundary_residual(self, beta: float) -> float:
        return float(abs(self.Mz[-1] - beta * self.M[-1]))

    def at(self, z):
        """(M, M_z) at arbitrary points of [0, z0]."""
        if self.evaluate is not None:
            return self.evaluate(z)
        spline = CubicSpline(self.z, self.M)
        return spline(z), spline(z, 1)


# ---------------------------------------------------------------------------
# quotient

def rayleigh_quotient(zeta, problem: SLProblem, z=None) -> float:
    """Rayleigh quotient of samples ``zeta`` (zeta[0] = 0) on a uniform grid."""
    zeta = np.asarray(zeta, dtype=float)
    z = np.linspace(0.0, problem.z0, len(zeta)) if z is None else np.asarray(z, dtype=float)
    if abs(zeta[0]) > 1e-12 * max(1.0, np.max(np.abs(zeta))):
        raise ValueError("admissible functions vanish at z = 0")
    a = problem.a(z)
    dz = np.gradient(zeta, z, edge_order=2)
    den = np.trapezoid(a * zeta ** 2, z)
    if den <= 0:
        raise ZeroDivisionError("zeta vanishes identically")
    num = np.trapezoid(a ** 3 * dz ** 2, z) - problem.beta * a[-1] ** 3 * zeta[-1] ** 2
    return float(num / den)


def mu_lower_bound(problem: SLProblem) -> float:
    """-4 beta^2 (xi + sqrt(2 c1 z0))^2, a lower bound for the lowest eigenvalue."""
    amax = problem.xi + math.sqrt(2.0 * problem.params.c1 * problem.z0)
    return -4.0 * max(problem.beta, 0.0) ** 2 * amax ** 2


def mu_lower_bound_swapped(xi: float, params: ModelParams) -> float:
    """Variant of the bound with c2 and c3 interchanged and Q = xi, for comparison."""
    z0 = z0_of_xi(xi, params)
    return -(4 * params.c3 ** 2 * (xi + math.sqrt(2 * params.c1 * z0)) ** 2
             / (xi ** 2 * (xi / 2 - params.c2) ** 2))


# ---------------------------------------------------------------------------
# finite-volume matrix method

def _fv_system(problem: SLProblem, N: int):
    """Symmetric stiffness (diag, off) and lumped mass for unknowns M_1..M_N.

    Vertex-centred finite volumes on the flux form; the Robin condition enters
    the half cell at z0 as the boundary flux beta a^3(z0) M_N.
    """
    z = np.linspace(0.0, problem.z0, N + 1)
    h = problem.z0 / N
    p = problem.a(0.5 * (z[:-1] + z[1:])) ** 3
    a = problem.a(z)
    diag = np.empty(N)
    diag[:-1] = (p[:-1] + p[1:]) / h
    diag[-1] = p[-1] / h - problem.beta * a[-1] ** 3
    off = -p[1:] / h
    mass = h * a[1:]
    mass[-1] *= 0.5
    return z, h, p, a, diag, off, mass


def _fv_eigs(problem: SLProblem, N: int, count: int = 1):
    z, h, p, a, diag, off, mass = _fv_system(problem, N)
    s = 1.0 / np.sqrt(mass)
    _, vecs = eigh_tridiagonal(diag * s * s, off * s[:-1] * s[1:],
                               select="i", select_range=(0, count - 1))
    mus, modes = [], []
    for i in range(count):
        v = np.concatenate([[0.0], vecs[:, i] * s])
        # energy form: a sum of squares, far better conditioned than the raw eigenvalue
        num = np.sum(p * np.diff(v) ** 2) / h - problem.beta * a[-1] ** 3 * v[-1] ** 2
        mus.append(num / np.sum(mass * v[1:] ** 2))
        modes.append(v)
    return z, np.array(mus), modes, (diag, off, mass)


def _extrapolate(problem: SLProblem, fine: np.ndarray, count: int) -> np.ndarray:
    # the error expands in even powers of the spacing; cancel h^2 and h^4
    m2 = _fv_eigs(problem, problem.N // 2, count)[1]
    m4 = _fv_eigs(problem, problem.N // 4, count)[1]
    return (64.0 * fine - 20.0 * m2 + m4) / 45.0


def sl_spectrum(problem: SLProblem, count: int, richardson: bool = True) -> np.ndarray:
    """Lowest ``count`` eigenvalues, Richardson-extrapolated from N, N/2 and N/4."""
    _, mus, _, _ = _fv_eigs(problem, problem.N, count)
    return _extrapolate(problem, mus, count) if richardson else mus


def mu_matrix(problem: SLProblem, richardson: bool = True) -> EigenResult:
    """Lowest eigenpair from the second-order finite-volume discretisation.

    The eigenvalue is Richardson-extrapolated from grids N, N/2 and N/4 unless
    ``richardson`` is False.  M is normalised to M(z0) = 1.
    """
    if problem.N < 32:
        raise ValueError("N must be at least 32")
    if richardson and problem.N % 4:
        raise ValueError("Richardson extrapolation needs N divisible by 4")
    z, mus, modes, (diag, off, mass) = _fv_eigs(problem, problem.N, 1)
    mu_raw = float(mus[0])
    v = modes[0]
    if v[-1] == 0:
        raise RuntimeError("eigenvector vanishes at the surface")
    M = v / v[-1]
    Kv = diag * M[1:]
    Kv[:-1] += off * M[2:]
    Kv[1:] += off * M[1:-1]
    resid = float(np.linalg.norm(Kv - mu_raw * mass * M[1:]) / np.linalg.norm(Kv))
    mu = mu_raw
    if richardson:
        mu = float(_extrapolate(problem, mus, 1)[0])
    Mz = np.gradient(M, z, edge_order=2)
    # top value from the flux balance of the half cell at z0, the
    # discretisation's own boundary flux
    h = z[1] - z[0]
    p_top = problem.a(z[-1] - 0.5 * h) ** 3
    a_top = problem.a(z[-1])
    Mz[-1] = (p_top * (M[-1] - M[-2]) / h - mu_raw * 0.5 * h * a_top * M[-1]) / a_top ** 3
    return EigenResult(mu=float(mu), z=z, M=M, Mz=Mz, method="matrix",
                       residual=resid, mu_raw=mu_raw)


# ---------------------------------------------------------------------------
# shooting

def _shoot(problem: SLProblem, mu: float, rtol: float = 1e-12, dense: bool = False):
    xi, z0 = problem.xi, problem.z0
    c1 = problem.params.c1

    def rhs(z, y):
        a = math.sqrt(xi * xi + 2.0 * c1 * max(z0 - z, 0.0))
        return [y[1] / a ** 3, -mu * a * y[0]]

    # state (zeta, a^3 zeta_z), integrated downward from the surface
    y0 = [1.0, problem.beta * xi ** 3]
    return solve_ivp(rhs, (z0, 0.0), y0, method="DOP853", rtol=rtol,
                     atol=1e-14, dense_output=dense)


def _zero_count(sol) -> int:
    """Sign changes of zeta along the integration steps plus a zero at z = 0."""
    y = sol.y[0]
    return int(np.count_nonzero(np.signbit(y[1:]) != np.signbit(y[:-1])))


def mu_shooting(problem: SLProblem, tol: float = 1e-9) -> EigenResult:
    """Lowest eigenpair by shooting from the surface with zeta(z0) = 1,
    zeta_z(z0) = beta and matching zeta(0) = 0.

    The lowest branch is bracketed without reference to the matrix method:
    below the Rayleigh lower bound the shot has no zero on [0, z0]; the
    quotient of the trial function zeta = z is an upper bound.
    """
    lo = mu_lower_bound(problem) - 1.0
    sol = _shoot(problem, lo)
    while _zero_count(sol) > 0 or sol.y[0, -1] <= 0:
        lo = 2.0 * lo - 1.0
        sol = _shoot(problem, lo)
        if lo < -1e12:
            raise ShootingError("could not find a zero-free shot below the spectrum")

    trial = problem.z
    hi = rayleigh_quotient(trial, problem, trial)
    hi += 1e-6 * abs(hi) + 1e-6
    sol = _shoot(problem, hi)
    for _ in range(200):
        if sol.y[0, -1] < 0 and _zero_count(sol) == 1:
            break
        mid = 0.5 * (lo + hi)
        sol_mid = _shoot(problem, mid)
        if _zero_count(sol_mid) == 0 and sol_mid.y[0, -1] > 0:
            lo = mid
        else:
            hi, sol = mid, sol_mid
    else:
        raise ShootingError("failed to isolate the lowest eigenvalue")

    from scipy.optimize import brentq

    f = lambda m: _shoot(problem, m).y[0, -1]
    mu = brentq(f, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=4 * np.finfo(float).eps,
                maxiter=200)
    sol = _shoot(problem, mu, dense=True)
    bottom = float(abs(sol.y[0, -1]))
    if bottom > tol:
        raise ShootingError(f"shooting residual {bottom:.3e} exceeds tolerance {tol:.1e}")

    def evaluate(zq, _sol=sol, _p=problem):
        zq = np.asarray(zq, dtype=float)
        y = _sol.sol(zq)
        return y[0], y[1] / _p.a(zq) ** 3

    z = problem.z
    M, Mz = evaluate(z)
    M[0] = 0.0
    return EigenResult(mu=float(mu), z=z, M=M, Mz=Mz, method="shooting",
                       residual=bottom, mu_raw=float(mu), evaluate=evaluate)


def solve_mu(problem: SLProblem, method: str = "matrix") -> EigenResult:
    if method == "matrix":
        return mu_matrix(problem)
    if method == "shooting":
        return mu_shooting(problem)
    raise ValueError(f"unknown method {method!r}")


def mu_of_xi(xi: float, params: ModelParams, N: int = 1024, method: str = "matrix",
             convention: str = "consistent") -> float:
    return solve_mu(sl_problem(xi, params, N=N, convention=convention), method).mu


# ---------------------------------------------------------------------------
# depth condition and the bifurcation point

class DepthCondition(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def depth_condition(params: ModelParams) -> DepthCondition:
    c1, d, c2, c3 = params.c1, params.d, params.c2, params.c3
    s = c2 + c3
    B = 2.0 * s ** 2 / c1 + d * (d * c1 + 4.0 * c2 + 4.0 * c3) / 2.0
    lhs = (math.sqrt(2) / 24) * c1 ** 2.5 * B ** 1.5 + (math.sqrt(2) / 20) * c1 ** 1.5 * B ** 2.5
    rhs = s ** 4
    return DepthCondition(lhs, rhs, lhs < rhs)


@dataclass
class XiStarReport:
    xi_star: float
    mu_at_root: float
    roots: list[float]
    bracket: tuple[float, float]
    slope: float
    increasing: bool
    scan: list[tuple[float, float]]
    depth: DepthCondition
    threshold: float
    above_threshold: bool
    N: int
    convention: str
    eigenfunction: EigenResult | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "xi_star": self.xi_star,
            "mu_at_root": self.mu_at_root,
            "roots": self.roots,
            "bracket": list(self.bracket),
            "slope": self.slope,
            "increasing": self.increasing,
            "depth_condition": {"lhs": self.depth.lhs, "rhs": self.depth.rhs,
                                "holds": self.depth.holds},
            "threshold_2_c2_plus_c3": self.threshold,
            "root_above_threshold": self.above_threshold,
            "N": self.N,
            "convention": self.convention,
            "scan": [list(p) for p in self.scan],
        }


def _mu_safe(xi, params, N, convention):
    try:
        return mu_of_xi(xi, params, N=N, convention=convention)
    except ValueError:
        return math.nan


def find_xi_star(params: ModelParams, xi_range: tuple[float, float] | None = None,
                 n_scan: int = 200, N: int = 1024,
                 convention: str = "consistent") -> XiStarReport:
    """Locate the crossings mu(xi) = -1 on a scan and refine them by bisection."""
    depth = depth_condition(params)
    if not depth.holds:
        warnings.warn(f"depth condition fails (lhs={depth.lhs:.4g} >= rhs={depth.rhs:.4g})",
                      stacklevel=2)
    lo, hi = xi_range if xi_range is not None else (params.epsilon0, params.xi_max)
    if lo < params.epsilon0 * (1 - 1e-12) or hi <= lo:
        raise ValueError(f"bad xi range ({lo}, {hi}); must lie in [epsilon0, inf)")
    xs = np.linspace(lo, hi, n_scan)
    mus = np.array([_mu_safe(x, params, N, convention) for x in xs])
    g = mus + 1.0

    roots, brackets = [], []
    for i in range(n_scan - 1):
        if not (np.isfinite(g[i]) and np.isfinite(g[i + 1])):
            continue
        if g[i] == 0.0:
            roots.append(float(xs[i]))
            brackets.append((float(xs[i]), float(xs[i])))
            continue
        if g[i] * g[i + 1] < 0:
            a, b, ga = xs[i], xs[i + 1], g[i]
            for _ in range(200):
                m = 0.5 * (a + b)
                gm = _mu_safe(m, params, N, convention) + 1.0
                if abs(gm) <= ROOT_TOL or m in (a, b):
                    break
                if (gm < 0) == (ga < 0):
                    a, ga = m, gm
                else:
                    b = m
            roots.append(float(m))
            brackets.append((float(xs[i]), float(xs[i + 1])))
    if not roots:
        raise NoCrossingError(
            f"no crossing of mu = -1 for xi in [{lo}, {hi}] "
            f"(mu ranges over [{np.nanmin(mus):.6g}, {np.nanmax(mus):.6g}])")

    xi_star = roots[0]
    delta = 1e-6 * xi_star
    slope = (_mu_safe(xi_star + delta, params, N, convention)
             - _mu_safe(xi_star - delta, params, N, convention)) / (2 * delta)
    prob = sl_problem(xi_star, params, N=N, convention=convention)
    eig = mu_matrix(prob)
    threshold = 2.0 * (params.c2 + params.c3)
    return XiStarReport(
        xi_star=xi_star, mu_at_root=eig.mu, roots=roots, bracket=brackets[0],
        slope=float(slope), increasing=bool(slope > 0),
        scan=[(float(x), float(m)) for x, m in zip(xs, mus)], depth=depth,
        threshold=threshold, above_threshold=bool(xi_star > threshold), N=N,
        convention=convention, eigenfunction=eig)


# ---------------------------------------------------------------------------
# Fourier reduction, kernel and transversality

def cosine_decompose(g, kmax: int | None = None, tol: float = 1e-8) -> np.ndarray:
    """Cosine coefficients m_k(z) with g(w, z) = sum_k m_k(z) cos(k w).

    ``g`` is sampled on w_j = -pi + 2 pi j / nw, j = 0..nw (both ends), so it
    has shape (nw + 1, nz).  Returns an array of shape (kmax + 1, nz).
    """
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    nw = g.shape[0] - 1
    scale = max(float(np.max(np.abs(g))), 1e-300)
    if np.max(np.abs(g - g[::-1])) > tol * scale:
        raise ValueError("input not even in w")
    kmax = nw // 2 if kmax is None else kmax
    w = -np.pi + 2.0 * np.pi * np.arange(nw) / nw
    k = np.arange(kmax + 1)
    C = np.cos(np.outer(k, w))
    coeffs = 2.0 * (C @ g[:-1]) / nw
    coeffs[0] *= 0.5
    if nw % 2 == 0 and kmax >= nw // 2:
        coeffs[nw // 2] *= 0.5
    return coeffs


@dataclass
class ModeEntry:
    k: int
    solvable: bool
    detail: str
    value: float


@dataclass
class KernelReport:
    xi_star: float
    modes: list[ModeEntry]
    spectrum: list[float]
    integral_a_minus3: float

    @property
    def dimension(self) -> int:
        return sum(m.solvable for m in self.modes)

    def as_dict(self) -> dict:
        return {
            "xi_star": self.xi_star,
            "dimension": self.dimension,
            "spectrum": self.spectrum,
            "integral_a_minus3": self.integral_a_minus3,
            "modes": [m.__dict__ for m in self.modes],
        }


def kernel_report(xi_star: float, kmax: int, params: ModelParams, N: int = 1024,
                  convention: str = "consistent", rel_tol: float = 1e-6) -> KernelReport:
    """Count the Fourier modes that admit a nontrivial linearised solution at xi_star."""
    prob = sl_problem(xi_star, params, N=N, convention=convention)
    spectrum = sl_spectrum(prob, count=max(3, kmax + 1))
    integral, _ = quad(lambda z: prob.a(z) ** -3, 0.0, prob.z0, epsabs=0, epsrel=1e-13)
    modes = [ModeEntry(0, False,
                       "m0 = A0 int a^-3 with int a^-3 > 0 and m0(z0) = 0 forces A0 = 0",
                       float(integral))]
    for k in range(1, kmax + 1):
        gap = float(np.min(np.abs(spectrum + k * k)))
        solvable = gap <= rel_tol * k * k
        if k == 1:
            detail = f"mu(xi*) = {spectrum[0]:.12g}"
        else:
            detail = f"mu(xi*) = {spectrum[0]:.6g} > -{k * k}: -k^2 lies below the spectrum"
        modes.append(ModeEntry(k, bool(solvable), detail, gap))
    return KernelReport(float(xi_star), modes, [float(m) for m in spectrum], float(integral))


@dataclass
class TransversalityReport:
    T: float
    interior: float
    boundary: float
    norm_sq: float
    lower_bound: float
    n_w: int
    n_z: int

    @property
    def ratio(self) -> float:
        return abs(self.T) / self.norm_sq

    def as_dict(self) -> dict:
        return {"T": self.T, "interior": self.interior, "boundary": self.boundary,
                "norm_sq": self.norm_sq, "ratio": self.ratio,
                "lower_bound_expression": self.lower_bound, "n_w": self.n_w, "n_z": self.n_z}


def transversality(xi_star: float, M: EigenResult, params: ModelParams,
                   n_w: int = 32, n_z: int = 64) -> TransversalityReport:
    """Pairing of the mixed derivative G_{xi,gamma} applied to zeta = M(z) cos w
    against zeta, by tensor-product quadrature (periodic trapezoid in w,
    Gauss-Legendre in z).  Uses a_z = -c1 / a.
    """
    xi = xi_star
    z0 = z0_of_xi(xi, params)
    c1, c2, c3 = params.c1, params.c2, params.c3
    w = -np.pi + 2.0 * np.pi * np.arange(n_w) / n_w
    ww = np.full(n_w, 2.0 * np.pi / n_w)
    x, wx = np.polynomial.legendre.leggauss(n_z)
    z = 0.5 * z0 * (x + 1.0)
    wz = 0.5 * z0 * wx

    Mv, Mzv = M.at(z)
    a = coefficient_a(z, xi, params, z0)
    a_z = -c1 / a
    W, _ = np.meshgrid(w, z, indexing="ij")
    zeta = np.cos(W) * Mv[None, :]
    zeta_ww = -zeta
    zeta_z = np.cos(W) * Mzv[None, :]
    integrand = a ** 3 * zeta * 2.0 * xi * (a ** -4 * zeta_ww + 3.0 * a ** -3 * a_z * zeta_z)
    interior = float(ww @ integrand @ wz)
    norm_sq = float(ww @ (zeta ** 2) @ wz)

    Mt, Mzt = M.at(np.array([z0]))
    top = np.cos(w) * Mt[0]
    top_z = np.cos(w) * Mzt[0]
    boundary = float(ww @ (2.0 * c2 * top ** 2 + xi ** 2 * top * top_z))

    with np.errstate(divide="ignore"):
        bracket = 2 * c2 + (math.sqrt(3) - c2 / (xi / 2 - c3)) * xi if xi / 2 != c3 else math.inf
    lower = float(bracket * (ww @ top ** 2))
    return TransversalityReport(interior + boundary, interior, boundary, norm_sq, lower,
                                n_w, n_z)
