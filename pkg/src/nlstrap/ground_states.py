"""Pure-power nonlinearity and the small nonlinear bound-state branch.

The branch is parametrized by z in C with Q[z] = (z/|z|) q_|z|, where the real
profile q_r and the frequency E(r^2) solve

    H q + g(q^2) q = E q,    <q, phi> = r.

The second equation fixes P(Q[z] - z phi) = 0, so the modulation coordinate
of Q[z] is exactly z.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import BranchRadiusExceeded, NewtonDivergence, ValidationError
from .operator_lab import Hamiltonian, SpectralData, derivative, l2_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Nonlinearity:
    """g(s) = sigma * s^((p-1)/2), f(u) = g(|u|^2) u.

    ``sigma = 0`` switches the nonlinearity off (linear flow).
    """

    p: float = 2.0
    sigma: float = -1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValidationError(f"exponent must exceed 1, got {self.p}")
        if self.sigma not in (-1.0, 0.0, 1.0):
            raise ValidationError(f"sigma must be -1, 0 or +1, got {self.sigma}")

    @property
    def alpha(self) -> float:
        return 0.5 * (self.p - 1.0)

    def g(self, s):
        return self.sigma * np.power(np.asarray(s, dtype=float), self.alpha)

    def G(self, s):
        return self.sigma * 2.0 / (self.p + 1.0) * np.power(np.asarray(s, dtype=float), self.alpha + 1.0)

    def dg(self, s):
        """g'(s); infinite at s = 0 when p < 3, only ever used away from 0."""
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return self.sigma * self.alpha * np.power(s, self.alpha - 1.0)

    def f(self, u):
        u = np.asarray(u)
        return self.g(np.abs(u) ** 2) * u

    def Df(self, u, X):
        """Real-linear derivative of f at u applied to X.

        Df(u) X = g(|u|^2) X + 2 g'(|u|^2) u Re(conj(u) X), written with
        omega = u / |u| so that u = 0 evaluates to the limit 0.
        """
        u = np.asarray(u, dtype=complex)
        X = np.asarray(X, dtype=complex)
        a = np.abs(u)
        omega = np.divide(u, a, out=np.zeros_like(u), where=a > 0)
        amp = self.sigma * a ** (self.p - 1.0)
        return amp * X + (self.p - 1.0) * amp * omega * np.real(np.conj(omega) * X)

    def bound_constants(self):
        """C_k with |g^(k)(s)| = C_k s^((p-1)/2 - k) exactly, k = 0, 1, 2."""
        a = self.alpha
        return (abs(self.sigma), abs(self.sigma * a), abs(self.sigma * a * (a - 1.0)))

    def eval(self, u, which: str):
        if which == "f":
            return self.f(u)
        if which == "g":
            return self.g(np.abs(u) ** 2)
        if which == "G":
            return self.G(np.abs(u) ** 2)
        raise ValidationError(f"unknown nonlinearity component {which!r}")


def energy_mass(u, op: Hamiltonian, nl: Nonlinearity):
    """(energy, mass) = (1/2 <Hu, u> + 1/2 int G(|u|^2), 1/2 ||u||^2).

    The factor 1/2 on the potential term makes the energy invariant under
    i u_t = H u + g(|u|^2) u with G' = g and the real pairing.
    """
    u = np.asarray(u, dtype=complex)
    h = op.grid.h
    kin = 0.5 * h * float(np.real(np.vdot(u, op.apply(u))))
    pot = 0.5 * h * float(np.sum(nl.G(np.abs(u) ** 2)))
    return kin + pot, 0.5 * h * float(np.sum(np.abs(u) ** 2))


def exp_weight(x, a: float):
    """(e^{a|x|}, d/dx e^{a|x|})."""
    w = np.exp(a * np.abs(x))
    return w, a * np.sign(x) * w


def h1_exp_norm(u, grid, a: float) -> float:
    """||e^{a|x|} u||_{H^1} with the product rule for the derivative."""
    w, dw = exp_weight(grid.x, a)
    wu = w * u
    d = dw * u + w * derivative(u, grid)
    return float(np.sqrt(l2_norm(wu, grid) ** 2 + l2_norm(d, grid) ** 2))


@dataclass(frozen=True)
class BoundStatePoint:
    z: complex
    Q: np.ndarray = field(repr=False)
    E: float
    D1Q: np.ndarray = field(repr=False)
    D2Q: np.ndarray = field(repr=False)
    newton_residual: float
    dE_dr: float = 0.0


@dataclass(frozen=True)
class _Profile:
    r: float
    q: np.ndarray
    E: float
    dq: np.ndarray
    dE: float
    residual: float


class BoundStateBranch:
    """Newton continuation of the real profiles q_r, cached by radius."""

    def __init__(self, op: Hamiltonian, spec: SpectralData, nl: Nonlinearity, z_max: float = 0.2,
                 tol: float = 1e-10, max_iter: int = 40, kappa: float = 0.3, max_cache: int = 256):
        if spec.grid != op.grid:
            raise ValidationError("spectral data and operator live on different grids")
        self.op = op
        self.spec = spec
        self.nl = nl
        self.z_max = float(z_max)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.max_cache = int(max_cache)
        self.a0 = 0.5 * min(np.sqrt(spec.lam), kappa)
        self._radii: list[float] = []
        self._cache: dict[float, _Profile] = {}
        h = op.grid.h
        self._hphi = h * spec.phi
        self._band = None
        if op.banded:
            self._H = op.sparse().tocsc()
            if op.grid.boundary == "dirichlet":
                up = op._banded_upper()
                b = up.shape[0] - 1
                full = np.zeros((2 * b + 1, op.grid.n))
                full[: b + 1] = up
                for k in range(1, b + 1):
                    full[b + k, :-k] = up[b - k, k:]
                self._band = full
        else:
            self._H = op.matrix()

    @property
    def metadata(self):
        return {"a0": self.a0, "z_max": self.z_max, "tol": self.tol}

    def _jacobian(self, q, E):
        n = q.size
        diag = self.nl.sigma * self.nl.p * np.abs(q) ** (self.nl.p - 1.0) - E
        if self._band is not None:
            return self._banded_solver(q, diag)
        if scipy.sparse.issparse(self._H):
            top = self._H + scipy.sparse.diags(diag)
            J = scipy.sparse.bmat([[top, scipy.sparse.csc_matrix(-q[:, None])],
                                   [scipy.sparse.csc_matrix(self._hphi[None, :]), None]], format="csc")
            return lambda rhs: scipy.sparse.linalg.spsolve(J, rhs)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = self._H + np.diag(diag)
        J[:n, n] = -q
        J[n, :n] = self._hphi
        lu = scipy.linalg.lu_factor(J)
        return lambda rhs: scipy.linalg.lu_solve(lu, rhs)

    def _banded_solver(self, q, diag):
        # bordered system by block elimination; the block A = H + diag - E is
        # nonsingular for r > 0 (its small eigenvalue scales like r^(p-1))
        b = self._band.shape[0] // 2
        ab = self._band.copy()
        ab[b] += diag
        hphi = self._hphi

        def solve(rhs):
            y = scipy.linalg.solve_banded((b, b), ab, np.column_stack([rhs[:-1], -q]),
                                          check_finite=False)
            den = hphi @ y[:, 1]
            dE = (hphi @ y[:, 0] - rhs[-1]) / den
            return np.append(y[:, 0] - dE * y[:, 1], dE)
        return solve

    def _residual(self, q, E):
        return self.op.apply(q) + self.nl.g(q * q) * q - E * q

    def _warm_start(self, r):
        if not self._radii:
            return r * self.spec.phi, -self.spec.lam
        i = bisect.bisect_left(self._radii, r)
        cands = [self._radii[j] for j in (i - 1, i) if 0 <= j < len(self._radii)]
        r0 = min(cands, key=lambda c: abs(c - r))
        p = self._cache[r0]
        return p.q + (r - r0) * p.dq, p.E + (r - r0) * p.dE

    def _solve(self, r: float) -> _Profile:
        q, E = self._warm_start(r)
        g = self.op.grid
        res = prev = np.inf
        for _ in range(self.max_iter):
            F = self._residual(q, E)
            res = l2_norm(F, g)
            c = float(self._hphi @ q) - r
            # iterate to the rounding floor, not just below tol
            if res <= self.tol and (res <= 1e-3 * self.tol or res > 0.5 * prev):
                break
            prev = res
            solve = self._jacobian(q, E)
            step = solve(-np.append(F, c))
            q = q + step[:-1]
            E = E + step[-1]
            if not np.all(np.isfinite(q)):
                break
        else:
            F = self._residual(q, E)
            res = l2_norm(F, g)
        if not (res <= self.tol and np.all(np.isfinite(q))):
            raise NewtonDivergence(f"branch Newton failed at r={r:.3e} (residual {res:.2e})",
                                   residual=res)
        rhs = np.zeros(q.size + 1)
        rhs[-1] = 1.0
        d = self._jacobian(q, E)(rhs)
        return _Profile(r, q, float(E), d[:-1], float(d[-1]), float(res))

    def profile(self, r: float) -> _Profile:
        r = float(r)
        if r < 0:
            raise ValidationError("radius must be nonnegative")
        if r > self.z_max:
            raise BranchRadiusExceeded(f"|z| = {r:.3g} exceeds branch radius {self.z_max:.3g}")
        if r == 0.0:
            return _Profile(0.0, np.zeros(self.op.grid.n), -self.spec.lam, np.array(self.spec.phi),
                            0.0, 0.0)
        if r not in self._cache:
            # continuation from the nearest solved radius, with intermediate
            # stops when the jump is large relative to r
            known = self._radii
            start = min(known, key=lambda c: abs(c - r)) if known else 0.0
            if start and abs(r - start) > 0.5 * max(r, start):
                for rr in np.geomspace(start, r, 6)[1:-1]:
                    self._store(self._solve(float(rr)))
            self._store(self._solve(r))
        return self._cache[r]

    def _store(self, prof: _Profile):
        if prof.r not in self._cache:
            bisect.insort(self._radii, prof.r)
            self._cache[prof.r] = prof
            while len(self._cache) > self.max_cache:
                old = next(iter(self._cache))
                del self._cache[old]
                self._radii.remove(old)

    def energy(self, r: float) -> float:
        return self.profile(abs(r)).E

    def __call__(self, z: complex) -> np.ndarray:
        return self.point(z).Q

    def point(self, z: complex) -> BoundStatePoint:
        """Q[z], E(|z|^2) and the real/imaginary-direction derivatives."""
        z = complex(z)
        r = abs(z)
        prof = self.profile(r)
        phi = self.spec.phi
        if r == 0:
            return BoundStatePoint(z, np.zeros(phi.size, complex), prof.E, phi.astype(complex),
                                   1j * phi, 0.0, 0.0)
        ph = z / r
        c, s = ph.real, ph.imag
        Q = ph * prof.q
        D1 = ph * (c * prof.dq - 1j * s * prof.q / r)
        D2 = ph * (s * prof.dq + 1j * c * prof.q / r)
        return BoundStatePoint(z, Q, prof.E, D1, D2, prof.residual, prof.dE)

    def Q_many(self, zs) -> np.ndarray:
        return np.array([self.point(z).Q for z in np.atleast_1d(zs)])


def solve_branch(branch: BoundStateBranch, z: complex) -> BoundStatePoint:
    return branch.point(z)


def decay_rate(q, grid, window=(0.3, 0.6)) -> float:
    """Fitted exponential decay rate of |q| on a tail window (fractions of L)."""
    x = grid.x
    a = np.abs(q)
    sel = (x >= window[0] * grid.L) & (x <= window[1] * grid.L) & (a > 1e-250)
    if sel.sum() < 3:
        return float("nan")
    slope = np.polyfit(x[sel], np.log(a[sel]), 1)[0]
    return float(-slope)


BRANCH_CSV_HEADER = ["abs_z", "E", "residual", "h1a_deviation", "decay_rate"]


def branch_table(branch: BoundStateBranch, radii):
    rows = []
    g = branch.op.grid
    for r in radii:
        pt = branch.point(r)
        dev = h1_exp_norm(pt.Q - r * branch.spec.phi, g, branch.a0)
        rows.append([float(r), pt.E, pt.newton_residual, dev, decay_rate(pt.Q, g)])
    return rows
