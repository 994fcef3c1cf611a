import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesselwave.laminar import (coefficient_a, coefficient_a_xi, coefficient_a_xi_fixed_z0,
                                coefficient_a_z, laminar_profile, verify_laminar_ode,
                                xi_of_z0, z0_of_xi)
from vesselwave.model import REFERENCE, ModelParams

UNIT = ModelParams(d=1.0, c1=1.0)


def test_z0_examples():
    assert z0_of_xi(1.0, UNIT) == 1.5
    assert z0_of_xi(2.2, REFERENCE) == pytest.approx(0.225, rel=1e-15)
    assert z0_of_xi(1e-14, REFERENCE) == pytest.approx(REFERENCE.d ** 2 * REFERENCE.c1 / 2)


@pytest.mark.parametrize("xi", [0.0, -1.0])
def test_z0_rejects_nonpositive(xi):
    with pytest.raises(ValueError):
        z0_of_xi(xi, UNIT)


def test_xi_of_z0_inverts():
    for xi in (0.07, 0.3, 4.0):
        assert xi_of_z0(z0_of_xi(xi, REFERENCE), REFERENCE) == pytest.approx(xi, rel=1e-13)


def test_dz0_dxi_equals_d():
    xi, h = 0.4, 1e-6
    fd = (z0_of_xi(xi + h, REFERENCE) - z0_of_xi(xi - h, REFERENCE)) / (2 * h)
    assert fd == pytest.approx(REFERENCE.d, rel=1e-9)


def test_coefficient_a_values():
    assert coefficient_a(1.5, 1.0, UNIT) == pytest.approx(1.0, abs=1e-15)
    assert coefficient_a(0.0, 1.0, UNIT) == pytest.approx(2.0, abs=1e-15)
    assert coefficient_a(0.225, 2.2, REFERENCE) == pytest.approx(2.2)


def test_coefficient_a_range_check():
    with pytest.raises(ValueError, match="outside"):
        coefficient_a(1.6, 1.0, UNIT)


def test_a_z_by_central_difference():
    z, h = 0.7, 1e-6
    fd = (coefficient_a(z + h, 1.0, UNIT) - coefficient_a(z - h, 1.0, UNIT)) / (2 * h)
    assert coefficient_a_z(z, 1.0, UNIT) == pytest.approx(fd, rel=1e-8)
    assert coefficient_a_z(z, 1.0, UNIT) == pytest.approx(-1.0 / coefficient_a(z, 1.0, UNIT))


def test_a_xi_variants():
    z, xi, h = 0.01, 0.3, 1e-6
    z0 = z0_of_xi(xi, REFERENCE)
    fixed = (coefficient_a(z, xi + h, REFERENCE, z0) - coefficient_a(z, xi - h, REFERENCE, z0)) / (2 * h)
    moving = (coefficient_a(z, xi + h, REFERENCE) - coefficient_a(z, xi - h, REFERENCE)) / (2 * h)
    assert coefficient_a_xi_fixed_z0(z, xi, REFERENCE) == pytest.approx(fixed, rel=1e-8)
    assert coefficient_a_xi(z, xi, REFERENCE) == pytest.approx(moving, rel=1e-8)


def test_profile_unit_example():
    prof = laminar_profile(1.0, 1000, UNIT)
    assert prof.H[0] == 0.0
    assert prof.H[-1] == 1.0
    mid = np.searchsorted(prof.z, 0.75)
    assert prof.z[mid] == pytest.approx(0.75)
    assert prof.H[mid] == pytest.approx(2.0 - math.sqrt(2.5), abs=1e-14)
    assert prof.Q == pytest.approx(1.0 + 2 * UNIT.c3)


def test_profile_surface_slope():
    prof = laminar_profile(2.2, 64, REFERENCE)
    assert prof.Hz[-1] == pytest.approx(1 / 2.2, rel=1e-15)


def test_profile_rejects_small_grid():
    with pytest.raises(ValueError):
        laminar_profile(1.0, 7, UNIT)


def test_rk4_agrees_and_converges_fourth_order():
    r1 = verify_laminar_ode(laminar_profile(1.0, 100, UNIT)).ode_residual
    r2 = verify_laminar_ode(laminar_profile(1.0, 200, UNIT)).ode_residual
    assert r2 < 1e-8
    assert 13 < r1 / r2 < 19


def test_surface_relation_exact():
    check = verify_laminar_ode(laminar_profile(0.3, 64, REFERENCE))
    assert check.surface_residual < 1e-15


@settings(max_examples=40, deadline=None)
@given(xi=st.floats(0.05, 5.0), d=st.floats(0.01, 2.0), c1=st.floats(0.1, 5.0))
def test_profile_invariants(xi, d, c1):
    p = ModelParams(d=d, c1=c1)
    prof = laminar_profile(xi, 32, p)
    assert prof.H[0] == 0.0 and prof.H[-1] == d
    assert np.all(np.diff(prof.H) > 0)
    np.testing.assert_allclose(prof.Hz * prof.a, 1.0, rtol=1e-14)
    # interior samples agree with the closed form at the ends too
    a0 = coefficient_a(0.0, xi, p)
    assert a0 == pytest.approx(xi + c1 * d, rel=1e-12)
