"""Modulation coordinates u = Q[z] + eta with eta in the continuous subspace.

Because the branch is normalized by (Q[z], phi) = z, the constraint
P(u - Q[z]) = 0 is solved by z = (u, phi) up to rounding; the Newton loop is
kept so that the map stays correct for any branch normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.integrate

from .errors import NewtonDivergence, OutsideSmallDataRadius, ValidationError
from .ground_states import BoundStateBranch
from .operator_lab import h1_norm, l2_norm


@dataclass(frozen=True)
class ModulationState:
    t: float
    z: complex
    eta: np.ndarray = field(repr=False)
    residual_norm: float
    iterations: int = 0


def _pairings(v, spec):
    """(<v, phi>, <v, i phi>) under the real pairing, as one complex number."""
    return spec.grid.h * (v @ spec.phi)


def decompose(u, branch: BoundStateBranch, c0: float = 0.2, t: float = 0.0,
              tol: float = 1e-15, max_iter: int = 20) -> ModulationState:
    """Unique (z, eta) with u = Q[z] + eta and P eta = 0 near the origin."""
    spec = branch.spec
    grid = spec.grid
    u = np.asarray(u, dtype=complex)
    if u.shape != (grid.n,):
        raise ValidationError("field does not match the branch grid")
    if h1_norm(u, grid) >= c0:
        raise OutsideSmallDataRadius(f"||u||_H1 = {h1_norm(u, grid):.3g} >= {c0}")
    z = complex(_pairings(u, spec))
    res = np.inf
    for it in range(max_iter + 1):
        pt = branch.point(z)
        c = complex(_pairings(u - pt.Q, spec))
        res = abs(c)
        if res <= tol * max(1.0, abs(z)):
            break
        # 2x2 real Jacobian of z -> (<Q[z], phi>, <Q[z], i phi>)
        j11 = spec.grid.h * np.real(pt.D1Q @ spec.phi)
        j21 = spec.grid.h * np.imag(pt.D1Q @ spec.phi)
        j12 = spec.grid.h * np.real(pt.D2Q @ spec.phi)
        j22 = spec.grid.h * np.imag(pt.D2Q @ spec.phi)
        dx, dy = np.linalg.solve([[j11, j12], [j21, j22]], [c.real, c.imag])
        z += complex(dx, dy)
    else:
        if res > 1e-10:
            raise NewtonDivergence(f"decomposition did not converge (residual {res:.2e})", residual=res)
    eta = u - branch.point(z).Q
    return ModulationState(float(t), z, eta, float(res), it)


def stability_constant(u, state: ModulationState, grid) -> float:
    """(|z| + ||eta||_H1) / ||u||_H1, 0 for u = 0."""
    nu = h1_norm(u, grid)
    if nu == 0:
        return 0.0
    return (abs(state.z) + h1_norm(state.eta, grid)) / nu


def time_derivative(t, y):
    """Second-order differences on a uniform time grid (one-sided at the ends)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y)
    if t.size < 5:
        raise ValidationError("need at least 5 samples")
    return np.gradient(y, t, edge_order=2, axis=0)


@dataclass(frozen=True)
class ResidualSeries:
    t: np.ndarray
    finite_difference: np.ndarray
    projection: np.ndarray | None
    condition: np.ndarray | None

    def l2(self, which: str = "finite_difference") -> float:
        v = getattr(self, which)
        return float(np.sqrt(np.trapezoid(np.abs(v) ** 2, self.t)))

    def agreement(self) -> float:
        """Relative L^2(I) gap between the two estimators."""
        if self.projection is None:
            return float("nan")
        den = max(self.l2("finite_difference"), self.l2("projection"))
        if den == 0:
            return 0.0
        d = self.finite_difference - self.projection
        return float(np.sqrt(np.trapezoid(np.abs(d) ** 2, self.t)) / den)


def projection_residual(z, eta, branch: BoundStateBranch, sponge=None):
    """w = z' + i E z from the pairing of the eta equation with phi and i phi.

    Solves Re w <i D1Q, T phi> + Im w <i D2Q, T phi> = <N - i W u, T phi>
    for T in {1, i}, with N = f(Q + eta) - f(Q).  Returns (w, cond).
    """
    spec = branch.spec
    h = spec.grid.h
    phi = spec.phi
    pt = branch.point(z)
    u = pt.Q + eta
    rhs = branch.nl.f(u) - branch.nl.f(pt.Q)
    if sponge is not None:
        rhs = rhs - 1j * sponge * u
    a = h * (1j * pt.D1Q) @ phi
    b = h * (1j * pt.D2Q) @ phi
    c = h * rhs @ phi
    m = np.array([[a.real, b.real], [a.imag, b.imag]])
    wr, wi = np.linalg.solve(m, [c.real, c.imag])
    return complex(wr, wi), float(np.linalg.cond(m))


def residual_series(t, z, branch: BoundStateBranch, etas=None, sponge=None) -> ResidualSeries:
    """z' + i E(|z|^2) z by finite differences (a) and by projection (b).

    (a) differences the demodulated zeta = z e^{i Theta}, Theta' = E, using
    z' + i E z = zeta' e^{-i Theta}; this removes the fast phase rotation from
    the differenced signal.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=complex)
    if t.size < 5:
        raise ValidationError("residual series needs at least 5 samples")
    E = np.array([branch.energy(abs(zz)) for zz in z])
    theta = scipy.integrate.cumulative_simpson(E, x=t, initial=0.0)
    rot = np.exp(1j * theta)
    fd = time_derivative(t, z * rot) / rot
    proj = cond = None
    if etas is not None:
        out = [projection_residual(zz, ee, branch, sponge) for zz, ee in zip(z, etas)]
        proj = np.array([o[0] for o in out])
        cond = np.array([o[1] for o in out])
    return ResidualSeries(t, fd, proj, cond)


@dataclass(frozen=True)
class EstimateRatio:
    ratios: np.ndarray = field(repr=False)
    max: float
    quantiles: tuple
    dropped: int


def check_discrete_estimate(residual, sigma_tilde, delta: float, p: float,
                            floor: float = 1e-14) -> EstimateRatio:
    """|z' + i E z| / (delta^(p-1) ||eta||_Sigma~), dropping tiny denominators."""
    residual = np.abs(np.asarray(residual))
    den = delta ** (p - 1.0) * np.asarray(sigma_tilde, dtype=float)
    ok = den >= floor
    r = residual[ok] / den[ok]
    if r.size == 0:
        return EstimateRatio(r, 0.0, (0.0, 0.0, 0.0), int((~ok).sum()))
    q = tuple(float(v) for v in np.quantile(r, [0.5, 0.9, 0.99]))
    return EstimateRatio(r, float(r.max()), q, int((~ok).sum()))


def random_pc_perturbation(spec, rng: np.random.Generator, h1_size: float) -> np.ndarray:
    """Smooth random field in the continuous subspace with the given H^1 norm."""
    from .operator_lab import project_pc

    x = spec.grid.x
    eta = np.zeros(x.size, dtype=complex)
    for _ in range(3):
        c = rng.uniform(-6, 6)
        w = rng.uniform(0.7, 2.5)
        eta += (rng.normal() + 1j * rng.normal()) * np.exp(-0.5 * ((x - c) / w) ** 2 + 1j * rng.uniform(-1, 1) * x)
    eta = project_pc(eta, spec)
    return eta * (h1_size / h1_norm(eta, spec.grid))


def mass_cross_term(Q, eta, grid) -> float:
    """<Q, eta> (real pairing)."""
    return float(np.real(grid.h * np.vdot(eta, Q)))


__all__ = ["ModulationState", "decompose", "residual_series", "check_discrete_estimate",
           "projection_residual", "stability_constant", "ResidualSeries", "EstimateRatio",
           "random_pc_perturbation", "mass_cross_term", "l2_norm"]
