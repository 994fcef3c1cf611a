import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesselwave import spectral
from vesselwave.model import ModelParams

# frozen reference values on the reference configuration
XI_STAR_SHOOTING = 0.09966799462497562
MU_015 = 93.5867864348
T_REF = 4.69937110063

FLAT = {  # a nearly constant coefficient: c1 -> 0
    "bare": (ModelParams(d=0.1, c1=1e-8, c2=1.0, c3=0.1, mode="abstract"), 1.0, 194.114298),
    "consistent": (ModelParams(d=0.1, c1=1e-8, c2=1.0, c3=0.1, mode="abstract"), 1.0, 205.071632),
    "negative": (ModelParams(d=1.0, c1=1e-8, c2=1.0, c3=0.1, mode="abstract"), 0.3, -44.444156),
}


def _flat_root(problem):
    """Closed-form lowest eigenvalue for a == xi."""
    from scipy.optimize import brentq
    xi, z0, beta = problem.xi, problem.z0, problem.beta
    if beta * z0 < 1:
        g = lambda k: k * math.cos(k * z0) - beta * math.sin(k * z0)
        k = brentq(g, 1e-12, math.pi / (2 * z0))
        return (k * xi) ** 2
    g = lambda q: q * math.cosh(q * z0) - beta * math.sinh(q * z0)
    q = brentq(g, 1e-9, 10 * beta)
    return -(q * xi) ** 2


def test_boundary_coefficient_conventions(R):
    assert spectral.boundary_coefficient(0.5, R) == pytest.approx(2 / 0.25)
    assert spectral.boundary_coefficient(0.5, R, "bare") == pytest.approx(1 / (0.5 * 0.15))
    with pytest.raises(ValueError, match="undefined"):
        spectral.boundary_coefficient(0.2, R, "bare")
    with pytest.raises(ValueError, match="unknown convention"):
        spectral.boundary_coefficient(0.5, R, "sideways")


@pytest.mark.parametrize("case", sorted(FLAT))
def test_flat_coefficient_oracle(case):
    params, xi, frozen = FLAT[case]
    conv = "bare" if case == "bare" else "consistent"
    prob = spectral.sl_problem(xi, params, convention=conv)
    exact = _flat_root(prob)
    assert exact == pytest.approx(frozen, abs=2e-6)
    for method in ("matrix", "shooting"):
        assert spectral.solve_mu(prob, method).mu == pytest.approx(exact, abs=1e-5)


def test_quarter_wave_with_zero_beta():
    params = ModelParams(d=0.1, c1=1e-10, c2=1.0, c3=0.1, mode="abstract")
    prob = spectral.sl_problem(0.7, params, beta=0.0)
    want = (math.pi / (2 * prob.z0) * 0.7) ** 2
    eig = spectral.mu_matrix(prob)
    assert eig.mu == pytest.approx(want, rel=1e-7)
    np.testing.assert_allclose(eig.M / eig.M[-1], np.sin(math.pi * eig.z / (2 * prob.z0)),
                               atol=1e-6)


def test_rayleigh_quotient_of_linear_function():
    params = ModelParams(d=0.1, c1=1e-10, c2=1.0, c3=0.1, mode="abstract")
    prob = spectral.sl_problem(0.4, params, beta=0.0)
    z = prob.z
    assert spectral.rayleigh_quotient(z, prob) == pytest.approx(3 * 0.4 ** 2 / prob.z0 ** 2,
                                                                rel=1e-6)


def test_rayleigh_quotient_requires_dirichlet(R):
    prob = spectral.sl_problem(0.2, R)
    with pytest.raises(ValueError, match="vanish"):
        spectral.rayleigh_quotient(np.ones(33), prob)


def test_xi_star_matches_shooting_oracle(xi_report):
    assert xi_report.xi_star == pytest.approx(XI_STAR_SHOOTING, abs=1e-9)
    assert xi_report.roots == [xi_report.xi_star]
    assert xi_report.increasing and xi_report.slope == pytest.approx(3024, rel=0.01)
    assert abs(xi_report.mu_at_root + 1) < 1e-8
    # the crossing lies below 2 (c2 + c3) on the reference configuration
    assert not xi_report.above_threshold


def test_mu_reference_values(R):
    assert spectral.mu_of_xi(0.15, R) == pytest.approx(MU_015, rel=1e-9)
    assert spectral.mu_of_xi(0.15, R, method="shooting") == pytest.approx(MU_015, rel=1e-8)
    assert spectral.mu_of_xi(0.08, R) == pytest.approx(-78.857, abs=1e-3)
    assert abs(spectral.mu_of_xi(0.1, R)) < 1e-6


def test_matrix_eigenfunction_residuals(R):
    prob = spectral.sl_problem(0.3, R)
    eig = spectral.mu_matrix(prob)
    assert eig.M[0] == 0.0
    assert eig.boundary_residual(prob.beta) < 1e-8 * abs(eig.Mz).max()
    shot = spectral.mu_shooting(prob)
    assert shot.boundary_residual(prob.beta) < 1e-8 * abs(shot.Mz).max()
    assert spectral.rayleigh_quotient(eig.M, prob) == pytest.approx(eig.mu, rel=1e-5)


@settings(max_examples=100, deadline=None)
@given(coef=st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4),
       xi=st.floats(0.06, 3.0))
def test_rayleigh_quotient_bounds_mu(coef, xi, R):
    prob = spectral.sl_problem(xi, R, N=256)
    s = prob.z / prob.z0
    zeta = s * (1.0 + coef[0] * s + coef[1] * s ** 2) + coef[2] * np.sin(3 * np.pi * s) \
        + coef[3] * np.sin(np.pi * s / 2)
    if np.max(np.abs(zeta)) < 1e-3:
        return
    mu = spectral.mu_matrix(prob).mu
    assert spectral.rayleigh_quotient(zeta, prob) >= mu - 1e-4 * max(1.0, abs(mu))


@pytest.mark.parametrize("xi", [0.06, 0.2, 1.5])
def test_lower_bound_holds(xi, R):
    prob = spectral.sl_problem(xi, R)
    assert spectral.mu_matrix(prob).mu >= spectral.mu_lower_bound(prob)


def test_depth_condition_reference(R):
    dc = spectral.depth_condition(R)
    assert dc.lhs == pytest.approx(1.058022, rel=1e-6)
    assert dc.rhs == pytest.approx(1.4641, rel=1e-12)
    assert dc.holds


def test_no_crossing_on_unit_configuration():
    p = ModelParams(d=1.0, c1=1.0, c2=1.0, c3=1.0, mode="abstract")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(spectral.NoCrossingError, match="no crossing"):
            spectral.find_xi_star(p, xi_range=(1.0, 5.0), n_scan=20, N=256)


def test_depth_failure_warns():
    p = ModelParams(d=1.0, c1=1.0, c2=1.0, c3=1.0, mode="abstract")
    assert not spectral.depth_condition(p).holds
    with pytest.warns(UserWarning, match="depth condition"):
        with pytest.raises(spectral.NoCrossingError):
            spectral.find_xi_star(p, xi_range=(1.0, 5.0), n_scan=10, N=128)


def test_cosine_decompose_examples():
    w = np.linspace(-np.pi, np.pi, 17)
    g = (0.5 + 2 * np.cos(w) - 0.25 * np.cos(3 * w))[:, None] * np.ones((1, 3))
    m = spectral.cosine_decompose(g, kmax=4)
    np.testing.assert_allclose(m[:, 0], [0.5, 2.0, 0.0, -0.25, 0.0], atol=1e-14)
    with pytest.raises(ValueError, match="not even"):
        spectral.cosine_decompose(np.sin(w))


def test_kernel_is_one_dimensional(xi_star, R):
    rep = spectral.kernel_report(xi_star, 4, R)
    assert rep.dimension == 1
    assert [m.k for m in rep.modes if m.solvable] == [1]
    assert rep.spectrum[0] == pytest.approx(-1.0, abs=1e-7)
    assert rep.spectrum[1] > 0
    assert rep.integral_a_minus3 > 0


def test_transversality_frozen(xi_report, R):
    eig = spectral.mu_shooting(spectral.sl_problem(xi_report.xi_star, R))
    rep = spectral.transversality(xi_report.xi_star, eig, R)
    assert rep.T == pytest.approx(T_REF, rel=1e-6)
    # with M_z = beta M at the top the boundary term is 4 pi c2 M(z0)^2
    assert rep.boundary == pytest.approx(4 * np.pi * R.c2 * eig.M[-1] ** 2, rel=1e-7)
    assert rep.interior == pytest.approx(-7.8670, abs=1e-3)
    assert rep.norm_sq == pytest.approx(0.00852019, rel=1e-5)
    fine = spectral.transversality(xi_report.xi_star, eig, R, n_w=64, n_z=128)
    assert fine.T == pytest.approx(rep.T, rel=1e-8)
    # the grid eigenvector gives the same value to its own accuracy
    coarse = spectral.transversality(xi_report.xi_star, xi_report.eigenfunction, R)
    assert coarse.T == pytest.approx(T_REF, rel=1e-5)


@pytest.mark.parametrize("xi", [0.3, 1.0, 3.0])
def test_bound_in_bare_convention(xi, R):
    prob = spectral.sl_problem(xi, R, convention="bare")
    assert spectral.mu_matrix(prob).mu >= spectral.mu_lower_bound(prob)


def test_swapped_bound_fails():
    # with c2 and c3 interchanged the expression is not a lower bound
    from vesselwave.model import REFERENCE
    prob = spectral.sl_problem(0.3, REFERENCE, convention="bare")
    assert spectral.mu_matrix(prob).mu < spectral.mu_lower_bound_swapped(0.3, REFERENCE)
