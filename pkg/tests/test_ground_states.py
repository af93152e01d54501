import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import Lab, smooth_field
from nlstrap.errors import BranchRadiusExceeded, ValidationError
from nlstrap.ground_states import (BRANCH_CSV_HEADER, BoundStateBranch, Nonlinearity, branch_table,
                                   decay_rate, energy_mass, h1_exp_norm, solve_branch)
from nlstrap.operator_lab import Grid, Hamiltonian, Potential, discrete_eigenpair, l2_norm, project_p

powers = st.floats(1.05, 3.0)
signs = st.sampled_from([-1.0, 1.0])


# --- nonlinearity -----------------------------------------------------------

def test_nonlinearity_rejects():
    with pytest.raises(ValidationError):
        Nonlinearity(1.0, -1.0)
    with pytest.raises(ValidationError):
        Nonlinearity(2.0, 0.5)


def test_nonlinearity_examples():
    nl = Nonlinearity(2.0, -1.0)
    u = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(nl.f(u), -np.abs(u) * u)
    for p in (1.5, 2.0, 3.0):
        for sigma in (-1.0, 1.0):
            assert Nonlinearity(p, sigma).G(1.0) == pytest.approx(sigma * 2 / (p + 1), abs=1e-15)
    assert nl.G(0.0) == 0.0
    assert np.all(nl.f(np.zeros(4, complex)) == 0)
    assert np.all(nl.Df(np.zeros(3, complex), np.ones(3)) == 0)
    with pytest.raises(ValidationError):
        nl.eval(u, "h")


@given(p=powers, sigma=signs, s=st.floats(1e-3, 1.0))
def test_G_prime_is_g(p, sigma, s):
    nl = Nonlinearity(p, sigma)
    h = 1e-6 * s
    fd = (nl.G(s + h) - nl.G(s - h)) / (2 * h)
    assert abs(fd - nl.g(s)) < 1e-6 * max(1.0, abs(nl.g(s)))


@given(p=powers, sigma=signs, s=st.floats(1e-6, 1.0))
def test_g_derivative_bounds(p, sigma, s):
    nl = Nonlinearity(p, sigma)
    c0, c1, c2 = nl.bound_constants()
    a = nl.alpha
    assert abs(nl.g(s)) <= c0 * s ** a * (1 + 1e-12)
    assert abs(nl.dg(s)) <= c1 * s ** (a - 1) * (1 + 1e-12)
    h = 1e-4 * s
    d2 = (nl.dg(s + h) - nl.dg(s - h)) / (2 * h)
    assert abs(d2) <= c2 * s ** (a - 2) * (1 + 1e-5) + 1e-9 * abs(c1 * s ** (a - 1)) / h


@given(p=powers, sigma=signs, seed=st.integers(0, 2 ** 32 - 1), theta=st.floats(0, 2 * np.pi))
def test_f_phase_equivariance(p, sigma, seed, theta):
    rng = np.random.default_rng(seed)
    nl = Nonlinearity(p, sigma)
    u = rng.normal(size=64) + 1j * rng.normal(size=64)
    ph = np.exp(1j * theta)
    np.testing.assert_allclose(nl.f(ph * u), ph * nl.f(u), atol=1e-14 * np.max(np.abs(nl.f(u))))
    np.testing.assert_allclose(nl.eval(u, "g"), nl.g(np.abs(u) ** 2))
    np.testing.assert_allclose(nl.eval(u, "G"), nl.G(np.abs(u) ** 2))


@given(p=powers, sigma=signs, seed=st.integers(0, 2 ** 32 - 1))
def test_Df_euler_and_finite_difference(p, sigma, seed):
    rng = np.random.default_rng(seed)
    nl = Nonlinearity(p, sigma)
    u = rng.normal(size=64) + 1j * rng.normal(size=64)
    X = rng.normal(size=64) + 1j * rng.normal(size=64)
    np.testing.assert_allclose(nl.Df(u, u), p * nl.g(np.abs(u) ** 2) * u, rtol=1e-12, atol=1e-14)
    h = 1e-5
    fd = (nl.f(u + h * X) - nl.f(u - h * X)) / (2 * h)
    assert np.linalg.norm(nl.Df(u, X) - fd) / np.linalg.norm(X) < 1e-6


# --- energy and mass --------------------------------------------------------

def test_energy_mass_examples(lab):
    assert energy_mass(np.zeros(lab.grid.n), lab.op, lab.nl) == (0.0, 0.0)
    assert energy_mass(lab.spec.phi, lab.op, lab.nl)[1] == pytest.approx(0.5, abs=1e-12)


def test_energy_small_amplitude(lab):
    lam, p = lab.spec.lam, lab.nl.p
    cs = np.geomspace(1e-3, 1e-1, 7)
    rem = [abs(energy_mass(c * lab.spec.phi, lab.op, lab.nl)[0] + 0.5 * c * c * lam) for c in cs]
    slope = np.polyfit(np.log(cs), np.log(rem), 1)[0]
    assert abs(slope - (p + 1)) < 0.05


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_mass_nonnegative(lab, seed):
    u = smooth_field(np.random.default_rng(seed), lab.x)
    assert energy_mass(u, lab.op, lab.nl)[1] >= 0


# --- bound-state branch -----------------------------------------------------

def test_branch_at_zero(lab):
    pt = lab.branch.point(0.0)
    assert np.all(pt.Q == 0) and pt.E == -lab.spec.lam


def test_branch_point_invariants(lab):
    z = 0.05
    pt = solve_branch(lab.branch, z)
    g = lab.grid
    assert pt.newton_residual <= 1e-10
    resid = lab.op.apply(pt.Q) + lab.nl.f(pt.Q) - pt.E * pt.Q
    assert l2_norm(resid, g) <= 1e-10
    assert np.max(np.abs(project_p(pt.Q - z * lab.spec.phi, lab.spec))) < 1e-12
    dev = h1_exp_norm(pt.Q - z * lab.spec.phi, g, lab.branch.a0) / z ** 2
    assert np.isfinite(dev)


def test_branch_gauge_example(lab):
    q = lab.branch(0.05)
    rot = np.exp(1j * np.pi / 3)
    np.testing.assert_allclose(lab.branch(0.05 * rot), rot * q, atol=1e-14)


@given(theta=st.floats(0, 2 * np.pi), r=st.floats(1e-3, 0.1))
def test_branch_gauge_and_energy(lab, theta, r):
    ph = np.exp(1j * theta)
    a, b = lab.branch.point(r), lab.branch.point(r * ph)
    np.testing.assert_allclose(b.Q, ph * a.Q, atol=1e-14)
    assert abs(a.E - b.E) <= 1e-13


def test_branch_slopes(lab):
    br, g, phi = lab.branch, lab.grid, lab.spec.phi
    p = lab.nl.p
    rs = np.geomspace(1e-3, 1e-1, 9)
    dq, d1, d2, de = [], [], [], []
    for r in rs:
        pt = br.point(r)
        assert pt.newton_residual <= 1e-10
        dq.append(h1_exp_norm(pt.Q - r * phi, g, br.a0))
        d1.append(h1_exp_norm(pt.D1Q - phi, g, br.a0))
        d2.append(h1_exp_norm(pt.D2Q - 1j * phi, g, br.a0))
        de.append(abs(pt.E + lab.spec.lam))
    slope = lambda v: np.polyfit(np.log(rs), np.log(v), 1)[0]
    assert abs(slope(dq) - p) < 0.1
    assert slope(d1) >= p - 1 - 0.1 and slope(d2) >= p - 1 - 0.1
    assert abs(slope(de) - (p - 1)) < 0.1


def test_branch_derivatives_match_differences(lab):
    br = lab.branch
    z, h = 0.03 + 0.02j, 1e-6
    pt = br.point(z)
    fd1 = (br(z + h) - br(z - h)) / (2 * h)
    fd2 = (br(z + 1j * h) - br(z - 1j * h)) / (2 * h)
    assert l2_norm(pt.D1Q - fd1, lab.grid) < 1e-6
    assert l2_norm(pt.D2Q - fd2, lab.grid) < 1e-6


def test_branch_localization(lab):
    rate = decay_rate(lab.branch(0.08), lab.grid)
    assert rate >= 0.9 * np.sqrt(lab.spec.lam)


def test_branch_radius(lab):
    with pytest.raises(BranchRadiusExceeded):
        lab.branch.point(0.25)
    with pytest.raises(ValidationError):
        lab.branch.profile(-0.1)


@pytest.mark.parametrize("stencil, boundary", [("fd4", "dirichlet"), ("spectral", "dirichlet"),
                                               ("fd2", "periodic")])
def test_branch_other_discretizations(stencil, boundary):
    g = Grid(20.0, 256, boundary)
    op = Hamiltonian(g, Potential.sech2(1.0), stencil)
    br = BoundStateBranch(op, discrete_eigenpair(op), Nonlinearity(2.0, -1.0))
    pt = br.point(0.1)
    assert pt.newton_residual <= 1e-10


@pytest.mark.parametrize("p, sigma", [(1.5, -1.0), (1.5, 1.0), (3.0, 1.0)])
def test_branch_other_nonlinearities(p, sigma):
    lab = Lab(L=20.0, n=401, p=p, sigma=sigma)
    for r in (1e-3, 0.05, 0.2):
        assert lab.branch.point(r).newton_residual <= 1e-10
    # focusing lowers the frequency, defocusing raises it
    assert np.sign(lab.branch.energy(0.2) + lab.spec.lam) == np.sign(sigma)


def test_branch_cache_bound():
    lab = Lab(L=20.0, n=201)
    br = BoundStateBranch(lab.op, lab.spec, lab.nl, max_cache=4)
    for r in np.linspace(0.01, 0.1, 12):
        br.point(r)
    assert len(br._cache) <= 4 and len(br._radii) == len(br._cache)
    assert br.point(0.01).newton_residual <= 1e-10


def test_branch_grid_mismatch(lab):
    other = discrete_eigenpair(Hamiltonian(Grid(20.0, 128), Potential.sech2()))
    with pytest.raises(ValidationError):
        BoundStateBranch(lab.op, other, lab.nl)


def test_branch_table(lab):
    rows = branch_table(lab.branch, [0.01, 0.05])
    assert len(rows) == 2 and len(rows[0]) == len(BRANCH_CSV_HEADER)
    assert rows[1][2] <= 1e-10
