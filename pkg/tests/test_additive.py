import numpy as np
import pytest

from perthom import additive, fem
from perthom.fields import cellwise_additive, make_realization, periodic_profile
from perthom.mesh import build_unit_mesh, replicate


def unit(dim, s):
    return build_unit_mesh(dim, s)


def super_(dim, s, N):
    return replicate(build_unit_mesh(dim, s), N)


def harmonic_mean(vals):
    return 1.0 / np.mean(1.0 / vals)


# ---------------------------------------------------------------------------
# correctors


def test_constant_background_corrector_vanishes():
    prof = periodic_profile("constant", dim=2, entries=(2.0, 3.0))
    fam = cellwise_additive(prof, 0.0)
    w0s = additive.corrector_set_0(fam, unit(2, 4))
    for sol in w0s:
        assert np.abs(sol.field.values).max() <= 1e-13
        assert np.abs(sol.gradients).max() <= 1e-13


def test_replicated_corrector_solves_supercell():
    # with amplitude 0 the supercell coefficient is periodic, so the
    # Q-periodic extension of w0 satisfies the Q_N equations exactly
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    mesh = super_(2, 4, 1)
    w0 = additive.solve_corrector_0(fam, mesh.base, [1.0, 0.0], rtol=1e-13)
    vals = additive.replicate_values(mesh, w0)
    a = fam.a_per_on(mesh)
    K = fem.assemble_stiffness(mesh, a)
    b = fem.assemble_flux_load(mesh, -np.einsum("tde,e->td", a, w0.p))
    assert np.abs(K.mat @ vals - b).max() <= 1e-9 * max(np.abs(b).max(), 1.0)


def test_1d_realized_harmonic_mean_oracle():
    prof = periodic_profile("two_phase_1d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.2, eta_max=0.5)
    r = make_realization(3)
    mesh = super_(1, 4, 2)
    eta = 0.3
    sol = additive.solve_corrector_eta(fam, r, eta, mesh, [1.0], rtol=1e-13)
    a = fam.a_eta_on(mesh, r, eta)[:, 0, 0]
    a_star = harmonic_mean(a)
    assert np.abs(sol.gradients[:, 0] - (a_star / a - 1.0)).max() <= 1e-9
    mat = additive.homogenized_eta(fam, r, eta, mesh, [sol])
    assert abs(mat[0, 0] - a_star) <= 1e-9


def test_laminate_corrector_structure():
    prof = periodic_profile("laminate_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    w0s = additive.corrector_set_0(fam, unit(2, 4), rtol=1e-13)
    # direction e_0: 1D profile in x_0, no variation in x_1
    assert np.abs(w0s[0].gradients[:, 1]).max() <= 1e-10
    # direction e_1: a(x_0) e_1 is divergence free, corrector vanishes
    assert np.abs(w0s[1].gradients).max() <= 1e-10


def test_first_corrector_zero_when_a1_zero():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    mesh = super_(2, 2, 1)
    w0s = additive.corrector_set_0(fam, mesh.base)
    w1s = additive.corrector_set_1(fam, make_realization(0), mesh, w0s)
    for sol in w1s:
        assert np.abs(sol.field.values).max() <= 1e-13


# ---------------------------------------------------------------------------
# homogenized matrices


def test_homogenized_per_constant_exact():
    prof = periodic_profile("constant", dim=2, entries=(2.0, 3.0))
    fam = cellwise_additive(prof, 0.0)
    m = unit(2, 4)
    w0s = additive.corrector_set_0(fam, m)
    out = additive.homogenized_per(fam, m, w0s)
    assert np.abs(out - np.diag([2.0, 3.0])).max() <= 1e-12


def test_homogenized_per_1d_harmonic_mean():
    prof = periodic_profile("two_phase_1d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    for s in (2, 4, 8):
        m = unit(1, s)
        w0s = additive.corrector_set_0(fam, m, rtol=1e-13)
        out = additive.homogenized_per(fam, m, w0s)
        assert abs(out[0, 0] - 1.6) <= 1e-11


def test_periodic_case_is_n_independent():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    r = make_realization(0)
    ref = None
    for N in (0, 1, 2):
        mesh = super_(2, 2, N)
        sols = additive.corrector_set_eta(fam, r, 0.1, mesh, rtol=1e-13)
        mat = additive.homogenized_eta(fam, r, 0.1, mesh, sols)
        if ref is None:
            ref = mat
        assert np.abs(mat - ref).max() <= 1e-9


def test_realized_matrix_symmetry_and_bounds():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(
        prof, amplitude=0.4, remainder="quadratic", remainder_amplitude=0.3
    )
    r = make_realization(21)
    mesh = super_(2, 4, 1)
    eta = 0.4
    sols = additive.corrector_set_eta(fam, r, eta, mesh, rtol=1e-12)
    mat = additive.homogenized_eta(fam, r, eta, mesh, sols)
    assert np.abs(mat - mat.T).max() <= 1e-8 * np.abs(mat).max()
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    assert eigs.min() >= fam.gamma - 1e-8
    assert eigs.max() <= fam.bound_hi + 1e-8


def test_first_order_matrix_zero_when_a1_zero():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    mesh = super_(2, 2, 1)
    w0s = additive.corrector_set_0(fam, mesh.base)
    w1s = additive.corrector_set_1(fam, make_realization(1), mesh, w0s)
    out = additive.homogenized_first_order(fam, make_realization(1), mesh, w0s, w1s)
    assert np.abs(out).max() <= 1e-12


def test_first_order_matrix_identity_background():
    # with A_per = I the background corrector vanishes and the periodic
    # average of grad w1 drops out, so A_1* is the lattice average of A_1
    prof = periodic_profile("constant", dim=2, entries=(1.0, 1.0))
    fam = cellwise_additive(prof, amplitude=0.3, mean_offset=0.5)
    r = make_realization(5)
    mesh = super_(2, 2, 1)
    w0s = additive.corrector_set_0(fam, mesh.base)
    w1s = additive.corrector_set_1(fam, r, mesh, w0s, rtol=1e-13)
    out = additive.homogenized_first_order(fam, r, mesh, w0s, w1s)
    ks = np.unique(mesh.cell_lattice, axis=0)
    mean_draw = np.mean([r.cell_draw(k)[0] for k in ks])
    expected = 0.3 * (mean_draw + 0.5) * np.eye(2)
    assert np.abs(out - expected).max() <= 1e-10


def test_first_order_matrix_quadrature_identity():
    # A_1* equals the average of (e_i + grad w0_i) . A_1 (e_j + grad w0_j):
    # the grad w1 term trades against the w0 equation tested with w1
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.3, mean_offset=0.2)
    r = make_realization(7)
    mesh = super_(2, 4, 1)
    w0s = additive.corrector_set_0(fam, mesh.base, rtol=1e-13)
    w1s = additive.corrector_set_1(fam, r, mesh, w0s, rtol=1e-13)
    out = additive.homogenized_first_order(fam, r, mesh, w0s, w1s)
    a_one = fam.a_one_on(mesh, r)
    d = mesh.dim
    direct = np.empty((d, d))
    flds = [
        w0s[j].p[None, :] + additive.replicate_gradients(mesh, w0s[j])
        for j in range(d)
    ]
    for i in range(d):
        for j in range(d):
            direct[i, j] = (
                np.einsum("t,td,tde,te->", mesh.volumes, flds[i], a_one, flds[j])
                / mesh.volume
            )
    assert np.abs(out - direct).max() <= 1e-10
    assert np.abs(out - out.T).max() <= 1e-10


def test_first_order_matches_central_difference():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.3)
    r = make_realization(11)
    mesh = super_(2, 2, 1)
    w0s = additive.corrector_set_0(fam, mesh.base, rtol=1e-13)
    w1s = additive.corrector_set_1(fam, r, mesh, w0s, rtol=1e-13)
    a1 = additive.homogenized_first_order(fam, r, mesh, w0s, w1s)

    def star(eta):
        sols = additive.corrector_set_eta(fam, r, eta, mesh, rtol=1e-13)
        return additive.homogenized_eta(fam, r, eta, mesh, sols)

    errs = []
    for eta in (0.1, 0.05):
        cd = (star(eta) - star(-eta)) / (2 * eta)
        errs.append(np.abs(cd - a1).max())
    assert errs[0] <= 0.01
    # central differences converge at second order
    assert 3.0 <= errs[0] / errs[1] <= 5.5


# ---------------------------------------------------------------------------
# deterministic first-order limit


def test_first_order_limit_cases():
    m = unit(2, 2)
    prof_i = periodic_profile("constant", dim=2, entries=(1.0, 1.0))
    fam0 = cellwise_additive(prof_i, amplitude=0.3)  # mean zero
    w0s = additive.corrector_set_0(fam0, m)
    assert np.abs(additive.first_order_limit(fam0, m, w0s)).max() <= 1e-14
    fam1 = cellwise_additive(prof_i, amplitude=0.3, mean_offset=0.5)
    out = additive.first_order_limit(fam1, m, w0s)
    assert np.abs(out - 0.15 * np.eye(2)).max() <= 1e-13


def test_first_order_limit_1d_integral():
    # limit = b m int (a*/a)^2 with a* the harmonic mean: for phases (1, 4),
    # int (1.6/a)^2 = (2.56 + 0.16) / 2 = 1.36
    prof = periodic_profile("two_phase_1d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.25, mean_offset=0.8, eta_max=0.4)
    m = unit(1, 2)
    w0s = additive.corrector_set_0(fam, m, rtol=1e-13)
    out = additive.first_order_limit(fam, m, w0s)
    assert abs(out[0, 0] - 0.25 * 0.8 * 1.36) <= 1e-11


# ---------------------------------------------------------------------------
# residual diagnostics


def test_residual_report_trivial_family():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.0)
    rep = additive.residual_report(
        fam, make_realization(2), 0.1, super_(2, 2, 1), rtol=1e-12
    )
    assert rep.residual_max_norm() <= 1e-6
    assert rep.v_norm <= 1e-6
    assert rep.z_norm <= 1e-4
    assert np.abs(rep.a1_star).max() <= 1e-12


def test_residual_report_rejects_eta_zero():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, 0.1)
    with pytest.raises(ValueError):
        additive.residual_report(fam, make_realization(0), 0.0, super_(2, 2, 0))


def test_residual_report_remainder_floor():
    # with A_1 = 0 and a quadratic remainder, the residual matrix tends to
    # the lattice average of the remainder density as eta -> 0
    prof = periodic_profile("constant", dim=2, entries=(1.0, 1.0))
    fam = cellwise_additive(
        prof, 0.0, remainder="quadratic", remainder_amplitude=0.3
    )
    r = make_realization(13)
    mesh = super_(2, 2, 1)
    eta = 0.02
    rep = additive.residual_report(fam, r, eta, mesh, rtol=1e-13)
    ks = np.unique(mesh.cell_lattice, axis=0)
    mean_y = np.mean([r.cell_draw(k)[1] for k in ks])
    assert np.abs(rep.residual_matrix - 0.3 * mean_y * np.eye(2)).max() <= 1e-3


def test_residual_and_z_uniform_as_eta_shrinks():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.3)
    r = make_realization(17)
    mesh = super_(2, 4, 1)
    w0s = additive.corrector_set_0(fam, mesh.base, rtol=1e-12)
    a_per = additive.homogenized_per(fam, mesh.base, w0s)
    w1s = additive.corrector_set_1(fam, r, mesh, w0s, rtol=1e-12)
    reps = {
        eta: additive.residual_report(
            fam, r, eta, mesh, w0s=w0s, w1s=w1s, a_per_star=a_per, rtol=1e-12
        )
        for eta in (0.2, 0.1, 0.05)
    }
    z = [reps[e].z_norm for e in (0.2, 0.1, 0.05)]
    res = [reps[e].residual_max_norm() for e in (0.2, 0.1, 0.05)]
    assert max(z) <= 4.0 * max(min(z), 1e-12)
    assert max(res) <= 4.0 * max(min(res), 1e-12)
    # the first difference grad(w_eta - w0) really is first order in eta
    v_unscaled = [reps[e].v_norm * abs(e) for e in (0.2, 0.1, 0.05)]
    assert 1.7 <= v_unscaled[0] / v_unscaled[1] <= 2.3
    assert 1.7 <= v_unscaled[1] / v_unscaled[2] <= 2.3


def test_residual_report_reuses_supplied_correctors():
    prof = periodic_profile("checkerboard_2d", a0=1.0, a1=4.0)
    fam = cellwise_additive(prof, amplitude=0.2)
    r = make_realization(23)
    mesh = super_(2, 2, 1)
    w0s = additive.corrector_set_0(fam, mesh.base, rtol=1e-12)
    a_per = additive.homogenized_per(fam, mesh.base, w0s)
    w1s = additive.corrector_set_1(fam, r, mesh, w0s, rtol=1e-12)
    full = additive.residual_report(fam, r, 0.1, mesh, rtol=1e-12)
    cached = additive.residual_report(
        fam, r, 0.1, mesh, w0s=w0s, w1s=w1s, a_per_star=a_per, rtol=1e-12
    )
    assert np.abs(full.residual_matrix - cached.residual_matrix).max() <= 1e-9
    assert abs(full.z_norm - cached.z_norm) <= 1e-6
