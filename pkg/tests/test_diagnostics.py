import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from conftest import Lab, smooth_field
from nlstrap.diagnostics import (build_weights, chi, chi_prime, commutator_probe, convergence_detectors,
                                 cutoff_projection_defect, localized_component_series, monotone_decreasing,
                                 norm_suite, phi_A, pure_power_estimate_check, random_compact_fields,
                                 series_rows, uniformity_constant, virial_bound_constant,
                                 virial_inequality_check, virial_I, virial_rate, zeta)
from nlstrap.errors import ValidationError
from nlstrap.evolution import EvolutionConfig, run
from nlstrap.modulation import projection_residual, random_pc_perturbation
from nlstrap.operator_lab import Grid, project_pc

seeds = st.integers(0, 2 ** 32 - 1)


@pytest.fixture(scope="module")
def W(lab):
    return build_weights(None, 4.0, 0.3, 0.2, lab.grid)


# --- weights ------------------------------------------------------------------

def test_chi_invariants():
    x = np.linspace(-3, 3, 6001)
    c = chi(x)
    assert np.all((c >= 0) & (c <= 1))
    np.testing.assert_array_equal(c, chi(-x))
    assert np.all(c[np.abs(x) <= 1] == 1) and np.all(c[np.abs(x) >= 2] == 0)
    assert np.all(x * chi_prime(x) <= 0)
    h = 1e-6
    xm = np.linspace(-2.5, 2.5, 401)
    np.testing.assert_allclose(chi_prime(xm), (chi(xm + h) - chi(xm - h)) / (2 * h), atol=1e-6)


def test_zeta_examples():
    A = 64.0
    assert zeta(0.0, A) == 1.0
    x = np.array([-10.0, -2.0, 2.0, 5.0, 40.0])
    np.testing.assert_allclose(zeta(x, A), np.exp(-np.abs(x) / A), rtol=1e-15)
    assert np.all(zeta(np.linspace(-1, 1, 11), A) == 1)


@given(x=st.floats(0.0, 60.0), A=st.floats(4.0, 200.0))
def test_phi_A_properties(x, A):
    assert phi_A(-x, A) == pytest.approx(-phi_A(x, A), abs=1e-14)
    ref = scipy.integrate.quad(lambda s: zeta(s, A) ** 2, 0.0, x, points=[1.0, 2.0] if x > 2 else None,
                               epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(phi_A(x, A) - ref) < 1e-11


def test_phi_A_examples():
    assert phi_A(0.5, 64.0) == 0.5
    x = np.linspace(-30, 30, 6001)
    p = phi_A(x, 64.0)
    assert np.all(np.diff(p) > 0)
    dp = np.gradient(p, x)
    assert np.max(np.abs(dp[1:-1] - zeta(x, 64.0)[1:-1] ** 2)) < 1e-4


def test_build_weights(lab, W):
    assert W.A == 64.0 and W.B == 4.0
    np.testing.assert_array_equal(W.chi_B, chi(lab.x / 4.0))
    np.testing.assert_array_equal(W.phi_A_prime, W.zeta_A ** 2)
    assert W.with_B(3.0).A == 27.0
    for bad in [(2.0, 4.0, 0.3, 0.2), (64.0, 1.0, 0.3, 0.2), (64.0, 4.0, 1.0, 0.2), (64.0, 4.0, 0.3, 0.0)]:
        with pytest.raises(ValidationError):
            build_weights(*bad, lab.grid)


# --- norms and the virial functional ---------------------------------------------

def test_norms_of_zero(lab, W):
    ns = norm_suite(np.zeros(lab.grid.n), W)
    for v in (ns.sigma_A, ns.sigma_tilde, ns.l2s, ns.exp_h1, ns.I_A):
        assert v == 0


@given(seed=seeds, c=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_norm_homogeneity(lab, W, seed, c):
    eta = smooth_field(np.random.default_rng(seed), lab.x)
    a, b = norm_suite(eta, W), norm_suite(c * eta, W)
    for name in ("sigma_A", "sigma_tilde", "l2s", "exp_h1"):
        assert getattr(b, name) == pytest.approx(abs(c) * getattr(a, name), rel=1e-13)
    assert b.I_A == pytest.approx(abs(c) ** 2 * a.I_A, rel=1e-11, abs=1e-15 * abs(c) ** 2)


def test_sigma_tilde_quadrature():
    # V = -2 sech^2, phi = sech / sqrt(2), kappa = 0.5
    # the integrand is below 1e-40 beyond |x| = 40
    ref = np.sqrt(scipy.integrate.quad(lambda s: 0.5 / np.cosh(s / 2) ** 2 / np.cosh(s) ** 2, -40.0, 40.0,
                                       epsabs=1e-14, limit=200)[0])
    vals = []
    for n in (1025, 2049):
        g = Grid(40.0, n)
        Wk = build_weights(64.0, 4.0, 0.5, 0.2, g)
        vals.append(float(norm_suite(1 / np.cosh(g.x) / np.sqrt(2), Wk).sigma_tilde))
    assert abs(vals[0] - vals[1]) < 1e-8
    assert abs(vals[1] - ref) < 1e-8


def test_norms_reject_mismatch(W):
    with pytest.raises(ValidationError):
        norm_suite(np.zeros(7), W)


@given(seed=seeds, theta=st.floats(0, 2 * np.pi))
def test_virial_real_and_phase(lab, W, seed, theta):
    eta = smooth_field(np.random.default_rng(seed), lab.x)
    assert abs(virial_I(eta.real, W)) < 1e-15
    i0 = virial_I(eta, W)
    assert abs(virial_I(np.exp(1j * theta) * eta, W) - i0) < 1e-13 * max(1.0, abs(i0))


def test_virial_ensemble_bound(lab, W, rng):
    fields = [smooth_field(rng, lab.x) for _ in range(100)]
    c = max(virial_bound_constant(f, W) for f in fields)
    # |<i eta, S_A eta>| <= 2 max|phi_A| ||D|| ||eta||^2 with ||D|| <= 1/h
    assert c <= np.max(np.abs(W.phi_A)) / (W.A * lab.grid.h)
    assert virial_bound_constant(np.zeros(lab.grid.n), W) == 0.0


@pytest.fixture(scope="module")
def small_run():
    lab = Lab(L=20.0, n=257, stencil="fd4")
    x = lab.x
    u0 = lab.branch(0.05) + 0.01 * np.exp(-0.5 * (x - 2.0) ** 2 + 1.0j * x)
    return lab, u0


def test_virial_rate_estimators_agree(small_run):
    lab, u0 = small_run
    W = build_weights(None, 2.0, 0.3, 0.2, lab.grid)
    gaps = []
    for stride in (20, 10):
        tr = run(u0, lab.op, lab.nl, EvolutionConfig(dt=1e-3, T_final=0.4, snapshot_stride=stride), lab.branch)
        ws = [projection_residual(z, e, lab.branch)[0] for z, e in zip(tr.z, tr.eta)]
        _, fd, inst = virial_rate(tr.t, tr.eta, W, tr.z, ws, lab.branch)
        gaps.append(np.max(np.abs(fd - inst)[2:-2]) / np.max(np.abs(inst)))
    assert gaps[1] < 0.05 and gaps[1] < 0.5 * gaps[0]


def test_virial_inequality_zero(lab, W):
    t = np.linspace(0, 1, 11)
    rep = virial_inequality_check(t, np.zeros((11, lab.grid.n)), np.zeros(11), W)
    assert rep.status == "0/0" and rep.C_emp == 0.0


def test_commutator_probe(lab, W, rng):
    fields = random_compact_fields(lab.grid, rng, 30)
    probe = commutator_probe(fields, W, lab.op)
    assert np.isfinite(probe.C) and probe.C >= 0 and probe.C_over_A == probe.C / W.A
    assert commutator_probe(np.zeros((2, lab.grid.n)), W, lab.op).C == 0.0


def test_pure_power(lab, W, rng):
    fields = random_compact_fields(lab.grid, rng, 200)
    rep = pure_power_estimate_check(fields, W, 2.0)
    assert np.isfinite(rep.max) and rep.dropped == 0
    scaled = pure_power_estimate_check(3.7j * fields, W, 2.0)
    np.testing.assert_allclose(scaled.ratios, rep.ratios, rtol=1e-12)
    assert pure_power_estimate_check(np.zeros((1, lab.grid.n)), W, 2.0).dropped == 1


# --- localized component and convergence -----------------------------------------

def test_localized_zero_and_rejects(lab, W):
    t = np.linspace(0, 1, 5)
    rep = localized_component_series(t, np.zeros((5, lab.grid.n)), W, lab.spec)
    assert rep.w_norm == 0 and rep.reconstruction_constant == 0
    with pytest.raises(ValidationError):
        localized_component_series(t, np.zeros((5, lab.grid.n)), W, lab.spec, s=1.5)


def test_reconstruction_constant_finite(lab, W, rng):
    etas = np.array([random_pc_perturbation(lab.spec, rng, 0.05) for _ in range(10)])
    rep = localized_component_series(np.arange(10.0), etas, W, lab.spec)
    assert np.isfinite(rep.reconstruction_constant) and rep.reconstruction_constant > 0


def test_cutoff_defect_decays_with_B(lab_fine):
    spec = lab_fine.spec
    eta = project_pc(1 / np.cosh(lab_fine.x / 2), spec)
    Bs = np.array([2.0, 3.0, 4.0, 5.0, 6.0])
    d = np.array([cutoff_projection_defect(eta, build_weights(64.0, B, 0.3, 0.2, lab_fine.grid), spec) for B in Bs])
    c = d / np.exp(-np.sqrt(spec.lam) * Bs)
    assert np.all(np.diff(d) < 0)
    assert np.max(c) < 10.0
    assert cutoff_projection_defect(np.zeros(lab_fine.grid.n), build_weights(64.0, 2.0, 0.3, 0.2, lab_fine.grid),
                                    spec) == 0.0


def test_monotone_decreasing():
    assert monotone_decreasing([3, 2, 1]) and not monotone_decreasing([3, 3, 1])


def test_detectors_stationary():
    lab = Lab(L=20.0, n=257, stencil="fd4")
    W = build_weights(None, 4.0, 0.3, 0.2, lab.grid)
    tr = run(lab.branch(0.01), lab.op, lab.nl, EvolutionConfig(dt=1e-3, T_final=10.0, snapshot_stride=250),
             lab.branch)
    rep = convergence_detectors(tr, lab.branch, W)
    assert abs(rep.r_plus - 0.01) < 1e-8 and rep.r_deviation < 1e-8 and rep.phase_error < 1e-6
    assert uniformity_constant(tr.z, lab.branch, 0.2) > 0
    zero = run(np.zeros(lab.grid.n), lab.op, lab.nl, EvolutionConfig(dt=1e-2, T_final=1.0, snapshot_stride=10),
               lab.branch)
    rep0 = convergence_detectors(zero, lab.branch, W)
    assert rep0.r_plus == 0 and rep0.r_deviation == 0 and rep0.a_ratio == 0 and rep0.phase_error == 0
    assert uniformity_constant(zero.z, lab.branch, 0.2) == 0.0
    with pytest.raises(ValidationError):
        convergence_detectors(zero, lab.branch, W, window_end=0.02)


def test_series_rows(lab, W, rng):
    etas = np.array([smooth_field(rng, lab.x) for _ in range(3)])
    header, rows = series_rows(np.arange(3.0), norm_suite(etas, W), {"abs_z": [1, 2, 3]})
    assert header[-1] == "abs_z" and len(rows) == 3 and len(rows[0]) == len(header)
