"""Physical constants and the body-force model.

The body force (f1, f2) enters the height-function system only through the
potential F with F_x = -f1, F_y = f2, normalised so that F(0, -d) = 0, and
through the constants

    c1 = f2 - int_{-d}^{y} df1/dx dr      (must not depend on (x, y))
    c2 = f2(x, 0)
    c3 = int_{-d}^{0} f2(x, r) dr
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RectBivariateSpline

MODES = ("physical", "abstract")


class ConfigurationError(ValueError):
    """Inconsistent or incomplete model configuration."""


@dataclass(frozen=True)
class ModelParams:
    """Physical constants shared by every stage.

    In ``physical`` mode the force is the constant vertical one, so c2 and c3
    are derived (c2 = c1, c3 = c1*d) and any explicit value must agree.  In
    ``abstract`` mode c2 and c3 are free nonnegative inputs.
    """

    d: float
    c1: float
    rho: float = 1.0
    c: float = 1.0
    c2: float | None = None
    c3: float | None = None
    epsilon0: float = 0.05
    xi_max: float = 5.0
    mode: str = "physical"
    tol: float = 1e-8

    def __post_init__(self):
        for name in ("d", "c1", "rho", "c"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive, got {value!r}")
        if not 0 < self.epsilon0 < 1:
            raise ConfigurationError("epsilon0 must lie in (0, 1)")
        if self.xi_max <= self.epsilon0:
            raise ConfigurationError("xi_max must exceed epsilon0")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "physical":
            c2, c3 = self.c1, self.c1 * self.d
            for name, want in (("c2", c2), ("c3", c3)):
                got = getattr(self, name)
                if got is not None and not math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-15):
                    raise ConfigurationError(
                        f"{name}={got!r} contradicts physical mode (expected {want!r})")
            object.__setattr__(self, "c2", c2)
            object.__setattr__(self, "c3", c3)
        else:
            for name in ("c2", "c3"):
                got = getattr(self, name)
                if got is None:
                    raise ConfigurationError(f"{name} required in abstract mode")
                if got < 0:
                    raise ConfigurationError(f"{name} must be nonnegative")

    def with_constants(self, c2: float, c3: float) -> "ModelParams":
        """Copy in abstract mode carrying explicitly derived (c2, c3)."""
        return replace(self, mode="abstract", c2=float(c2), c3=float(c3))

    def laminar_head(self, xi: float) -> float:
        """Bernoulli head of the laminar flow with surface parameter xi.

        With F(0, -d) = 0 the undisturbed surface sits at F = c3, so the
        surface condition 1 = (Q - 2 c3) / xi gives Q = xi + 2 c3.
        """
        return xi + 2.0 * self.c3

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("d", "c1", "rho", "c", "c2", "c3", "epsilon0", "xi_max", "mode", "tol")}


REFERENCE = ModelParams(d=0.1, c1=1.0, rho=1.0, c=1.0)


# ---------------------------------------------------------------------------
# body force

FORCE_KINDS = ("constant", "tabulated")


@dataclass
class BodyForceModel:
    """Body force (f1, f2); either constant vertical or sampled on a grid.

    For ``tabulated`` models ``x`` and ``y`` are strictly increasing axes and
    ``f1``, ``f2`` have shape ``(len(x), len(y))``.
    """

    kind: str
    c1: float = 1.0
    d: float = 0.1
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    f1_table: np.ndarray | None = None
    f2_table: np.ndarray | None = None
    _interp: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in FORCE_KINDS:
            raise ConfigurationError(f"unknown force kind {self.kind!r}")
        if self.kind == "tabulated":
            x = np.asarray(self.x, dtype=float)
            y = np.asarray(self.y, dtype=float)
            f1 = np.asarray(self.f1_table, dtype=float)
            f2 = np.asarray(self.f2_table, dtype=float)
            if x.ndim != 1 or y.ndim != 1 or len(x) < 3 or len(y) < 3:
                raise ConfigurationError("tabulated force needs 1-D axes with >= 3 samples")
            if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
                raise ConfigurationError("tabulated force axes must be strictly increasing")
            if f1.shape != (len(x), len(y)) or f2.shape != (len(x), len(y)):
                raise ConfigurationError("tabulated force grid is not rectangular")
            if y[0] > -self.d + 1e-12 or y[-1] < 0:
                raise ConfigurationError("tabulated force must cover -d <= y <= 0")
            self.x, self.y, self.f1_table, self.f2_table = x, y, f1, f2
            # potential F(x, y) = int_{-d}^{y} f2(x, r) dr - int_0^x f1(s, -d) ds
            k = min(3, len(x) - 1, len(y) - 1)
            ix = RectBivariateSpline(x, y, f1, kx=k, ky=k)
            iy = RectBivariateSpline(x, y, f2, kx=k, ky=k)
            Fy = cumulative_trapezoid(f2, y, axis=1, initial=0.0)
            Fy -= RectBivariateSpline(x, y, Fy, kx=k, ky=k).ev(x, np.full_like(x, -self.d))[:, None]
            Fx = cumulative_trapezoid(ix.ev(x, np.full_like(x, -self.d)), x, initial=0.0)
            Fx -= np.interp(0.0, x, Fx)
            self._interp = {
                "f1": ix,
                "f2": iy,
                "F": RectBivariateSpline(x, y, Fy - Fx[:, None], kx=k, ky=k),
            }

    def _eval(self, name, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self._interp[name].ev(x.ravel(), y.ravel()).reshape(x.shape)

    def f1(self, x, y):
        if self.kind == "constant":
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return self._eval("f1", x, y)

    def f2(self, x, y):
        if self.kind == "constant":
            return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, self.c1)
        return self._eval("f2", x, y)

    def potential(self, x, y):
        """F with F_x = -f1, F_y = f2 and F(0, -d) = 0."""
        if self.kind == "constant":
            x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
            return self.c1 * (y + self.d)
        return self._eval("F", x, y)

    def f1_column_integral(self, x, y):
        """int_{-d}^{y} f1(x, r) dr (zero for the constant model)."""
        if self.kind == "constant":
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = np.empty(x.shape)
        for idx in np.ndindex(x.shape):
            r = np.linspace(-self.d, y[idx], 65)
            out[idx] = np.trapezoid(self.f1(np.full_like(r, x[idx]), r), r)
        return out


def build_body_force(config: dict) -> BodyForceModel:
    """Build a force model from ``{"kind": ..., ...}``.

    ``constant`` needs ``c1`` and ``d``.  ``tabulated`` needs either arrays
    ``x``, ``y``, ``f1``, ``f2`` or a ``table_path`` to a CSV with header
    ``x,y,f1,f2``.
    """
    kind = config.get("kind", "constant")
    if kind in ("constant", "ConstantVertical"):
        return BodyForceModel("constant", c1=float(config["c1"]), d=float(config["d"]))
    if kind not in ("tabulated", "Tabulated"):
        raise ConfigurationError(f"unknown force kind {kind!r}")
    if "table_path" in config:
        x, y, f1, f2 = read_force_table(config["table_path"])
    else:
        x, y, f1, f2 = (config[k] for k in ("x", "y", "f1", "f2"))
    return BodyForceModel("tabulated", c1=float(config.get("c1", 1.0)), d=float(config["d"]),
                          x=x, y=y, f1_table=f1, f2_table=f2)


def read_force_table(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read a CSV force table (header ``x,y,f1,f2``) into grid arrays."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["x", "y", "f1", "f2"]:
            raise ConfigurationError(f"force table header must be x,y,f1,f2, got {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if rows.size == 0:
        raise ConfigurationError("empty force table")
    x = np.unique(rows[:, 0])
    y = np.unique(rows[:, 1])
    if len(x) * len(y) != len(rows):
        raise ConfigurationError("force table is not a rectangular grid")
    f1 = np.full((len(x), len(y)), np.nan)
    f2 = np.full((len(x), len(y)), np.nan)
    ix = np.searchsorted(x, rows[:, 0])
    iy = np.searchsorted(y, rows[:, 1])
    f1[ix, iy] = rows[:, 2]
    f2[ix, iy] = rows[:, 3]
    if np.isnan(f1).any():
        raise ConfigurationError("force table is not a rectangular grid")
    return x, y, f1, f2


# ---------------------------------------------------------------------------
# validation

@dataclass
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "max_residual": c.residual,
                 "tolerance": c.tolerance, "passed": c.passed}
                for c in self.checks
            ],
        }


def _sample_grid(model: BodyForceModel, params: ModelParams, nx=129, ny=65):
    if model.kind == "tabulated":
        x = model.x[(model.x >= -np.pi - 1e-12) & (model.x <= np.pi + 1e-12)]
        y = model.y[(model.y >= -params.d - 1e-12) & (model.y <= 1e-12)]
        return x, y, model.f1_table[np.ix_(np.isin(model.x, x), np.isin(model.y, y))], \
            model.f2_table[np.ix_(np.isin(model.x, x), np.isin(model.y, y))]
    x = np.linspace(-np.pi, np.pi, nx)
    y = np.linspace(-params.d, 0.0, ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    return x, y, model.f1(X, Y), model.f2(X, Y)


def validate_body_force(model: BodyForceModel, params: ModelParams,
                        tol: float | None = None) -> ValidationReport:
    """Check the structural assumptions on (f1, f2) over [-pi, pi] x [-d, 0].

    Derivatives are central differences on the sampling grid, integrals are
    trapezoidal.  Failures are reported, never raised.
    """
    tol = params.tol if tol is None else tol
    x, y, f1, f2 = _sample_grid(model, params)
    scale = max(params.c1, float(np.max(np.abs(f2))), 1e-300)

    # subtracting one slice leaves derivatives unchanged and keeps constants exact
    df1_dy = np.gradient(f1 - f1[:, :1], y, axis=1, edge_order=2)
    df2_dx = np.gradient(f2 - f2[:1], x, axis=0, edge_order=2)
    irrot = float(np.max(np.abs(df1_dy + df2_dx)))

    boundary = float(max(np.max(np.abs(f1[:, 0])), np.max(np.abs(f1[:, -1]))))
    col_int = float(np.max(np.abs(np.trapezoid(f1, y, axis=1))))

    df1_dx = np.gradient(f1 - f1[:1], x, axis=0, edge_order=2)
    lap_z = cumulative_trapezoid(df1_dx, y, axis=1, initial=0.0) - f2
    spread = float(np.max(lap_z) - np.min(lap_z))
    offset = float(np.max(np.abs(lap_z + params.c1)))

    negativity = float(max(0.0, -np.min(f1), -np.min(f2)))

    return ValidationReport([
        Check("irrotational", irrot, tol * scale),
        Check("f1_boundary_vanishing", boundary, tol * scale),
        Check("f1_zero_column_integral", col_int, tol * scale * params.d),
        Check("laplacian_z_constant", spread, tol * params.c1),
        Check("laplacian_z_equals_minus_c1", offset, tol * params.c1),
        Check("nonnegative", negativity, tol * scale),
    ])


def derive_constants(model: BodyForceModel, params: ModelParams,
                     tol: float | None = None) -> tuple[float, float]:
    """Return (c2, c3) = (f2(x, 0), int_{-d}^0 f2(x, r) dr).

    Both must be independent of x to within ``tol`` (relative), otherwise the
    configuration is rejected.
    """
    tol = params.tol if tol is None else tol
    if model.kind == "constant":
        return float(model.c1), float(model.c1 * params.d)
    x = model.x[(model.x >= -np.pi - 1e-12) & (model.x <= np.pi + 1e-12)]
    c2_x = model.f2(x, np.zeros_like(x))
    r = np.linspace(-params.d, 0.0, 257)
    X, R = np.meshgrid(x, r, indexing="ij")
    c3_x = np.trapezoid(model.f2(X, R), r, axis=1)
    for name, vals in (("boundary constant c2", c2_x), ("integrated constant c3", c3_x)):
        ref = max(float(np.max(np.abs(vals))), 1e-300)
        if np.ptp(vals) > tol * ref:
            raise ConfigurationError(f"x-dependent {name}: variation {np.ptp(vals):.3e}")
    return float(np.mean(c2_x)), float(np.mean(c3_x))
