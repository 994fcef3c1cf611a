import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesselwave import nonlinear as nl
from vesselwave.laminar import z0_of_xi

Q_ONSET = 0.29998293


def test_discretization_rejects_odd_grid():
    with pytest.raises(ValueError):
        nl.Discretization(7, 8)
    with pytest.raises(ValueError):
        nl.HeightField(np.zeros((4, 5)), 1.0, 1.0, None)


def test_derivatives_exact_on_quadratics():
    disc = nl.Discretization(16, 8, symmetric=False)
    W, S = np.meshgrid(disc.w, disc.sigma, indexing="ij")
    g = disc.derivatives(np.cos(W) * S ** 2)
    np.testing.assert_allclose(g["hs"], np.cos(W) * 2 * S, atol=1e-12)
    np.testing.assert_allclose(g["hss"][:, 1:-1], 2 * np.cos(W)[:, 1:-1], atol=1e-10)


def test_laminar_residual_second_order(R):
    norms = []
    for nz in (16, 32, 64):
        fld = nl.laminar_field(0.3, 8, nz, R)
        res = nl.residual(fld)
        assert abs(res.mass) < 1e-15
        norms.append(res.norm())
    assert 3.5 < norms[0] / norms[1] < 4.5
    assert 3.5 < norms[1] / norms[2] < 4.5


def test_laminar_column_solve_is_w_independent(R):
    z0 = z0_of_xi(0.3, R)
    L, Q = nl.solve_laminar(z0, 32, R)
    fld = nl.HeightField(np.tile(L, (9, 1)), Q, z0, R)
    assert fld.w_variation() == 0.0
    assert nl.residual(fld).norm() < 1e-11
    assert Q == pytest.approx(R.laminar_head(0.3), rel=1e-3)


def _bumpy(R, nw=16, nz=12, amp=0.02):
    fld = nl.laminar_field(0.4, nw, nz, R)
    W, S = np.meshgrid(fld.w, fld.sigma, indexing="ij")
    fld.h = fld.h + amp * R.d * np.cos(W) * np.sin(np.pi * S / 2) ** 2 \
        + 0.3 * amp * R.d * np.sin(2 * W) * S ** 2
    fld.h[-1] = fld.h[0]
    return fld


@settings(max_examples=25, deadline=None)
@given(j=st.integers(0, 15), k=st.integers(1, 11))
def test_residual_locality(j, k, R):
    fld = _bumpy(R)
    base = nl.residual(fld)
    fld.h[j, k] += 1e-6
    if j == 0:
        fld.h[-1, k] += 1e-6
    pert = nl.residual(fld)
    changed = np.count_nonzero(pert.interior[:-1] != base.interior[:-1])
    assert changed <= 9
    if k < fld.nz - 2:
        assert np.array_equal(pert.top, base.top)


def test_jacobian_matches_differences(R):
    fld = _bumpy(R)
    J = nl.assemble_jacobian(fld).toarray()
    disc = nl.Discretization(fld.nw, fld.nz, symmetric=False)

    def F(x):
        f = nl.HeightField(fld.h.copy(), x[-1], fld.z0, R)
        f.h[:-1].reshape(-1)[disc.unknown] = x[:-1]
        f.h[-1] = f.h[0]
        r = nl.residual(f)
        return np.concatenate([(r.interior[:-1] * fld.z0 ** 2).ravel(), r.top[:-1], [r.mass]])

    x0 = np.append(fld.h[:-1].ravel()[disc.unknown], fld.Q)
    rng = np.random.default_rng(1)
    for _ in range(5):
        v = rng.standard_normal(x0.size) * 1e-3
        fd = (F(x0 + v * 1e-3) - F(x0 - v * 1e-3)) / 2e-3
        np.testing.assert_allclose(J @ v, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


def test_onset_values(onset):
    assert onset.xi == pytest.approx(0.09993524, abs=1e-7)
    assert onset.Q == pytest.approx(Q_ONSET, abs=1e-7)
    assert onset.m[0] == 0.0 and onset.m[-1] == 1.0


def test_discrete_kernel(onset):
    lam = onset.laminar()
    J = nl.assemble_jacobian(lam)
    disc = nl.Discretization(onset.nw, onset.nz, symmetric=False)
    phi = np.cos(disc.w)[:, None] * onset.m[None, :]
    x = np.append(phi.ravel()[disc.unknown], 0.0)
    r = J @ x
    scale = np.abs(J).max() * np.abs(x).max()
    assert np.abs(r).max() < 1e-9 * scale


def test_zero_amplitude_newton_returns_laminar(onset):
    fld, info = nl.newton_solve(onset.laminar(), 0.0, onset)
    assert info.iterations <= 1
    np.testing.assert_allclose(fld.h, onset.laminar().h, atol=1e-13)
    assert fld.Q == pytest.approx(onset.Q, abs=1e-12)


def test_stagnation_detected(onset, R):
    bad = onset.laminar()
    bad.h[:, 5] = bad.h[:, 3] - 1e-3
    with pytest.raises(nl.StagnationError, match="stagnation breach"):
        nl.newton_solve(bad, 1e-5, onset)
    with pytest.raises(nl.StagnationError):
        nl.residual(bad)


def test_branch_quality(branch, R):
    assert len(branch.records) == 21
    for rec, fld in zip(branch.records, branch.fields):
        assert rec.residual <= 1e-10
        assert abs(nl.Discretization(fld.nw, fld.nz).mean_top(fld.half()) - R.d) < 1e-12
        np.testing.assert_array_equal(fld.h, fld.h[::-1])
    assert np.all(np.diff(branch.eps) > 0)
    assert branch.halvings == 0


def test_head_correction_is_quadratic(branch, onset):
    eps, Q = branch.eps[1:], branch.Q[1:]
    ratio = (Q - onset.Q) / eps ** 2
    assert ratio[0] == pytest.approx(1142, rel=0.01)
    assert np.ptp(ratio) < 0.1 * ratio[0]
    assert np.all(np.diff(ratio) > 0)


def test_resolve_from_checkpoint(branch, onset):
    fld = branch.fields[10]
    again, info = nl.newton_solve(fld, fld.eps, onset)
    assert again.Q == pytest.approx(fld.Q, abs=1e-10)
    assert info.iterations <= 1


def test_branch_argument_checks(R, onset):
    with pytest.raises(ValueError):
        nl.continue_branch(0.1, 0, 1e-5, R, onset=onset)
    with pytest.raises(ValueError, match="monotone"):
        nl.continue_branch(0.1, 0, 0, R, onset=onset, eps_values=[1e-5, 1e-6, 2e-5])


def test_branch_reproducible(R, onset, branch):
    again = nl.continue_branch(onset.xi, 3, 5e-5, R, onset=onset)
    for a, b in zip(again.records, branch.records):
        assert a.row() == b.row()


def test_linear_mode_residual_is_quadratic(R, xi_star):
    from vesselwave.spectral import mu_shooting, sl_problem
    eig = mu_shooting(sl_problem(xi_star, R))
    norms = []
    for amp in (0.0, 1e-4, 1e-3):
        fld = nl.laminar_field(xi_star, 128, 1024, R)
        M, _ = eig.at(fld.z)
        fld.h = fld.h + amp * np.cos(fld.w)[:, None] * (M / M[-1])[None, :]
        norms.append(nl.residual(fld).norm())
    # strip the discretisation floor of the closed-form state
    ratio = (norms[2] - norms[0]) / (norms[1] - norms[0])
    assert 90 < ratio < 110


def test_predictor_converges_at_moderate_amplitude(onset):
    fld, info = nl.newton_solve(nl.predictor(onset, 3e-4), 3e-4, onset)
    assert info.iterations <= 5 and info.residual <= 1e-10


def test_discrete_onset_converges_to_xi_star(R, xi_star):
    gaps = [nl.discrete_onset(xi_star, nw, nz, R).xi - xi_star
            for nw, nz in ((32, 16), (64, 32), (128, 64))]
    assert all(g > 0 for g in gaps)
    assert gaps[0] / gaps[1] > 3.0 and gaps[1] / gaps[2] > 3.0


def test_residual_of_even_field_is_even(R):
    fld = nl.laminar_field(0.4, 16, 12, R)
    W, S = np.meshgrid(fld.w, fld.sigma, indexing="ij")
    fld.h = fld.h + 1e-3 * (np.cos(W) + 0.3 * np.cos(2 * W)) * S ** 2
    res = nl.residual(fld)
    np.testing.assert_allclose(res.interior, res.interior[::-1], rtol=0,
                               atol=1e-12 * np.abs(res.interior).max())
    np.testing.assert_allclose(res.top, res.top[::-1], rtol=0, atol=1e-15)
