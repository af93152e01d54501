"""Discretized Schrödinger operator H = -d^2/dx^2 + V on a truncated line.

Fields are plain complex numpy arrays sampled on a :class:`Grid`.  All inner
products use the uniform rule ``h * sum(...)``, which makes every stencil
below exactly self-adjoint.

Dirichlet grids keep all ``n`` points as unknowns; the wall sits on implicit
ghost nodes at ``x = +-(L + h)`` and wider stencils use odd reflection about
those nodes.  With that closure each stencil is diagonalized by the type-I
sine transform, and periodic grids by the FFT.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
import scipy.special

from ._kernels import chebyshev_stencil
from .errors import GridMismatch, NoBoundState, ValidationError

log = logging.getLogger(__name__)

BOUNDARIES = ("dirichlet", "periodic")
STENCILS = ("fd2", "fd4", "spectral")
STENCIL_ORDER = {"fd2": 2, "fd4": 4}

# (c0, c1, c2) of -d^2/dx^2 in units of 1/h^2
_FD_COEFFS = {
    "fd2": (2.0, -1.0, 0.0),
    "fd4": (5.0 / 2.0, -4.0 / 3.0, 1.0 / 12.0),
}


@dataclass(frozen=True)
class Grid:
    """Uniform mesh on [-L, L].

    ``dirichlet``: ``n`` points from -L to L inclusive, ``h = 2L/(n-1)``.
    ``periodic``: ``n`` points ``-L + j h`` with ``h = 2L/n``; ``n`` must be
    even so that x = 0 is a grid point.
    """

    L: float
    n: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValidationError(f"half width must be finite and positive, got {self.L}")
        if int(self.n) != self.n or self.n < 16:
            raise ValidationError(f"need at least 16 grid points, got {self.n}")
        if self.boundary not in BOUNDARIES:
            raise ValidationError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.boundary == "periodic" and self.n % 2:
            raise ValidationError("periodic grids need an even point count")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        if self.boundary == "dirichlet":
            return 2.0 * self.L / (self.n - 1)
        return 2.0 * self.L / self.n

    @cached_property
    def x(self) -> np.ndarray:
        if self.boundary == "dirichlet":
            x = np.linspace(-self.L, self.L, self.n)
            x[self.n // 2:] = -x[: (self.n + 1) // 2][::-1]  # exact mirror symmetry
            if self.n % 2:
                x[self.n // 2] = 0.0
        else:
            x = self.h * (np.arange(self.n) - self.n // 2)  # integer multiples: exact symmetry
        x.flags.writeable = False
        return x

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.L, factor * self.n, self.boundary)


def build_grid(L: float, n: int, boundary: str = "dirichlet") -> Grid:
    return Grid(L, n, boundary)


def inner(u, v, grid: Grid) -> complex:
    """Complex pairing (u, v) = integral of u * conj(v)."""
    return grid.h * np.vdot(v, u)


def real_inner(u, v, grid: Grid) -> float:
    """Real pairing <u, v> = Re (u, v)."""
    return float(np.real(inner(u, v, grid)))


def l2_norm(u, grid: Grid) -> float:
    return float(np.sqrt(grid.h * np.sum(np.abs(u) ** 2)))


def derivative(u, grid: Grid) -> np.ndarray:
    """Centered first difference with the grid's boundary closure.

    The matrix is exactly skew-symmetric on both boundary kinds.
    """
    u = np.asarray(u)
    if grid.boundary == "periodic":
        return (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2.0 * grid.h)
    out = np.empty_like(u)
    out[..., 1:-1] = u[..., 2:] - u[..., :-2]
    out[..., 0] = u[..., 1]
    out[..., -1] = -u[..., -2]
    return out / (2.0 * grid.h)


def h1_norm(u, grid: Grid) -> float:
    return float(np.sqrt(l2_norm(u, grid) ** 2 + l2_norm(derivative(u, grid), grid) ** 2))


def weighted_h1_norm(u, weight, weight_prime, grid: Grid) -> float:
    """H^1 norm of ``weight * u`` using the product rule for the derivative."""
    wu = weight * u
    d = weight_prime * u + weight * derivative(u, grid)
    return float(np.sqrt(l2_norm(wu, grid) ** 2 + l2_norm(d, grid) ** 2))


@dataclass(frozen=True)
class Potential:
    """Real potential; built-in kinds are ``zero`` and ``scaled_sech2``.

    ``scaled_sech2`` is ``-depth * sech(x / width)**2``.  ``tabulated``
    potentials are linearly interpolated and vanish outside the table.
    """

    kind: str = "scaled_sech2"
    depth: float = 1.0
    width: float = 1.0
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("zero", "scaled_sech2", "tabulated"):
            raise ValidationError(f"unknown potential kind {self.kind!r}")
        if self.kind == "scaled_sech2" and (self.depth <= 0 or self.width <= 0):
            raise ValidationError("sech2 potential needs depth > 0 and width > 0")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValidationError("tabulated potential needs a table")
            xs, vs = self.table
            if len(xs) != len(vs) or len(xs) < 2 or np.any(np.diff(xs) <= 0):
                raise ValidationError("table needs >= 2 strictly increasing abscissae")
            if not np.all(np.isfinite(vs)):
                raise ValidationError("table values must be finite")

    @classmethod
    def zero(cls) -> "Potential":
        return cls("zero", 0.0, 1.0)

    @classmethod
    def sech2(cls, depth: float = 1.0, width: float = 1.0) -> "Potential":
        return cls("scaled_sech2", float(depth), float(width))

    @classmethod
    def tabulated(cls, x, v) -> "Potential":
        return cls("tabulated", 0.0, 1.0, (tuple(map(float, x)), tuple(map(float, v))))

    @classmethod
    def from_file(cls, path) -> "Potential":
        data = np.loadtxt(path, ndmin=2)
        if data.shape[1] != 2:
            raise ValidationError(f"{path}: expected two columns (x, V)")
        order = np.argsort(data[:, 0])
        return cls.tabulated(data[order, 0], data[order, 1])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "scaled_sech2":
            return -self.depth / np.cosh(x / self.width) ** 2
        xs, vs = self._arrays
        return np.interp(x, xs, vs, left=0.0, right=0.0)

    @cached_property
    def _arrays(self):
        # the table is stored as tuples for hashability; converting per call is O(table)
        return np.asarray(self.table[0]), np.asarray(self.table[1])

    def decays_on(self, grid: Grid, tail_fraction: float = 0.25) -> bool:
        """Check exponential decay on the outer part of the grid.

        For sech2, |V| <= 4 depth exp(-2|x|/width) holds exactly; the check
        guards tabulated input.
        """
        x = grid.x
        tail = np.abs(x) >= (1 - tail_fraction) * grid.L
        v = np.abs(self(x[tail]))
        if self.kind == "zero":
            return True
        if self.kind == "scaled_sech2":
            return bool(np.all(v <= 4 * self.depth * np.exp(-2 * np.abs(x[tail]) / self.width) * (1 + 1e-12)))
        scale = max(np.max(np.abs(self(x))), 1e-300)
        return bool(np.max(v, initial=0.0) <= 1e-6 * scale)


class Hamiltonian:
    """H = -D^2 + V on a grid, with D^2 one of the supported stencils."""

    def __init__(self, grid: Grid, potential: Potential, stencil: str = "fd2"):
        if stencil not in STENCILS:
            raise ValidationError(f"stencil must be one of {STENCILS}")
        self.grid = grid
        self.potential = potential
        self.stencil = stencil
        self.V = potential(grid.x)
        self.V.flags.writeable = False

    def __repr__(self):
        return f"Hamiltonian({self.grid!r}, {self.potential!r}, stencil={self.stencil!r})"

    @property
    def key(self):
        return (self.grid, self.potential, self.stencil)

    def __eq__(self, other):
        return isinstance(other, Hamiltonian) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def banded(self) -> bool:
        return self.stencil in _FD_COEFFS

    @property
    def order(self):
        return STENCIL_ORDER.get(self.stencil)

    def with_grid(self, grid: Grid) -> "Hamiltonian":
        return Hamiltonian(grid, self.potential, self.stencil)

    def fd_coefficients(self):
        c0, c1, c2 = _FD_COEFFS[self.stencil]
        h2 = self.grid.h ** 2
        return c0 / h2, c1 / h2, c2 / h2

    @cached_property
    def kinetic_symbol(self) -> np.ndarray:
        """Eigenvalues of -D^2 in the sine (Dirichlet) or Fourier (periodic) basis."""
        g = self.grid
        if g.boundary == "dirichlet":
            theta = np.pi * np.arange(1, g.n + 1) / (g.n + 1)
        else:
            theta = 2 * np.pi * np.fft.fftfreq(g.n)
        if self.stencil == "spectral":
            return (theta / g.h) ** 2
        c0, c1, c2 = self.fd_coefficients()
        return c0 + 2 * c1 * np.cos(theta) + 2 * c2 * np.cos(2 * theta)

    def _transform(self, psi, inverse=False):
        if self.grid.boundary == "dirichlet":
            f = scipy.fft.idst if inverse else scipy.fft.dst
            return f(psi, type=1, axis=-1)
        f = scipy.fft.ifft if inverse else scipy.fft.fft
        return f(psi, axis=-1)

    def kinetic_function(self, psi, fn) -> np.ndarray:
        """Apply fn(-D^2) through the diagonalizing transform."""
        return self._transform(fn(self.kinetic_symbol) * self._transform(psi), inverse=True)

    def apply_kinetic(self, psi) -> np.ndarray:
        psi = np.asarray(psi)
        if psi.shape[-1] != self.grid.n:
            raise GridMismatch(f"field has {psi.shape[-1]} samples, grid has {self.grid.n}")
        if self.stencil == "spectral":
            out = self.kinetic_function(psi, lambda s: s)
            return out if np.iscomplexobj(psi) else out.real
        c0, c1, c2 = self.fd_coefficients()
        pad = np.zeros(psi.shape[:-1] + (psi.shape[-1] + 4,), dtype=psi.dtype)
        pad[..., 2:-2] = psi
        if self.grid.boundary == "periodic":
            pad[..., :2] = psi[..., -2:]
            pad[..., -2:] = psi[..., :2]
        else:
            pad[..., 0] = -psi[..., 0]
            pad[..., -1] = -psi[..., -1]
        out = c0 * psi + c1 * (pad[..., 1:-3] + pad[..., 3:-1])
        if c2:
            out += c2 * (pad[..., :-4] + pad[..., 4:])
        return out

    def apply(self, psi) -> np.ndarray:
        return self.apply_kinetic(psi) + self.V * psi

    __call__ = apply

    def spectral_bounds(self):
        lo = min(float(self.V.min()), 0.0)
        hi = float(self.kinetic_symbol.max()) + max(float(self.V.max()), 0.0)
        pad = 1e-3 * (hi - lo) + 1.0
        return lo - pad, hi + pad

    def sparse(self) -> scipy.sparse.csr_matrix:
        n = self.grid.n
        if not self.banded:
            return scipy.sparse.csr_matrix(self.matrix())
        c0, c1, c2 = self.fd_coefficients()
        diags = [np.full(n, c0) + self.V, np.full(n - 1, c1)]
        offsets = [0, 1]
        if c2:
            diags.append(np.full(n - 2, c2))
            offsets.append(2)
        diags[0] = diags[0].copy()
        if self.grid.boundary == "dirichlet" and c2:
            diags[0][0] -= c2
            diags[0][-1] -= c2
        upper = scipy.sparse.diags(diags[1:], offsets[1:], shape=(n, n))
        m = scipy.sparse.diags(diags[0]) + upper + upper.T
        if self.grid.boundary == "periodic":
            m = m.tolil()
            m[0, n - 1] += c1
            m[n - 1, 0] += c1
            if c2:
                m[0, n - 2] += c2
                m[n - 2, 0] += c2
                m[1, n - 1] += c2
                m[n - 1, 1] += c2
        return scipy.sparse.csr_matrix(m)

    def matrix(self) -> np.ndarray:
        if self.banded:
            return self.sparse().toarray()
        eye = np.eye(self.grid.n)
        k = self.kinetic_function(eye, lambda s: s).real
        k = 0.5 * (k + k.T)
        return k + np.diag(self.V)

    def _banded_upper(self):
        c0, c1, c2 = self.fd_coefficients()
        n = self.grid.n
        d = np.full(n, c0) + self.V
        if c2:
            d[0] -= c2
            d[-1] -= c2
            ab = np.zeros((3, n))
            ab[0, 2:] = c2
            ab[1, 1:] = c1
            ab[2] = d
        else:
            ab = np.zeros((2, n))
            ab[0, 1:] = c1
            ab[1] = d
        return ab

    def _tridiagonal(self):
        return self.grid.boundary == "dirichlet" and self.stencil == "fd2"

    def lowest(self, k: int = 3):
        """Lowest ``k`` eigenpairs with Euclidean-orthonormal columns."""
        k = min(k, self.grid.n)
        if self._tridiagonal():
            c0, c1, _ = self.fd_coefficients()
            return scipy.linalg.eigh_tridiagonal(
                np.full(self.grid.n, c0) + self.V, np.full(self.grid.n - 1, c1),
                select="i", select_range=(0, k - 1))
        if self.banded and self.grid.boundary == "dirichlet":
            return self._shift_invert(k)
        return scipy.linalg.eigh(self.matrix(), subset_by_index=(0, k - 1))

    def _shift_invert(self, k):
        # banded LAPACK drivers accumulate a dense n x n transform; ARPACK
        # shift-invert about the lower spectral bound is O(n) per iteration
        k = min(k, self.grid.n - 2)
        w, U = scipy.sparse.linalg.eigsh(self.sparse().tocsc(), k=k, sigma=self.spectral_bounds()[0],
                                         which="LM", v0=np.ones(self.grid.n), tol=0)
        order = np.argsort(w)
        return w[order], U[:, order]

    def count_below(self, value: float) -> int:
        lo = self.spectral_bounds()[0]
        if self._tridiagonal():
            c0, c1, _ = self.fd_coefficients()
            w = scipy.linalg.eigvalsh_tridiagonal(
                np.full(self.grid.n, c0) + self.V, np.full(self.grid.n - 1, c1),
                select="v", select_range=(lo, value))
        elif self.banded and self.grid.boundary == "dirichlet":
            k = 4
            while True:
                w = self._shift_invert(k)[0]
                if w[-1] >= value or k >= self.grid.n - 2:
                    break
                k *= 2
            w = w[w < value]
        else:
            w = scipy.linalg.eigvalsh(self.matrix(), subset_by_value=(lo, value))
        return int(len(w))

    def eigh(self):
        """Full eigendecomposition (cached per operator)."""
        return _full_eigh(self)


@functools.lru_cache(maxsize=2)
def _full_eigh(op: Hamiltonian):
    if op._tridiagonal():
        c0, c1, _ = op.fd_coefficients()
        w, U = scipy.linalg.eigh_tridiagonal(np.full(op.grid.n, c0) + op.V,
                                             np.full(op.grid.n - 1, c1))
    elif op.banded and op.grid.boundary == "dirichlet":
        w, U = scipy.linalg.eig_banded(op._banded_upper())
    else:
        w, U = scipy.linalg.eigh(op.matrix())
    w.flags.writeable = False
    U.flags.writeable = False
    return w, U


@dataclass(frozen=True)
class SpectralData:
    """Bound state of the discrete operator.

    ``lam`` and ``phi`` are exact for the grid operator (H phi = -lam phi to
    solver precision) and are what the dynamics use.  ``lam_extrapolated`` is
    the Richardson estimate of the continuum eigenvalue.
    """

    grid: Grid
    lam: float
    phi: np.ndarray = field(repr=False)
    n_negative: int
    residual: float
    lam_fine: float = float("nan")
    lam_extrapolated: float = float("nan")

    @property
    def energy(self) -> float:
        return -self.lam

    @property
    def multiple_eigenvalues(self) -> bool:
        return self.n_negative > 1


def _positive_ground_state(op: Hamiltonian, w0: float, v0: np.ndarray) -> np.ndarray:
    v = v0 * np.sign(v0[np.argmax(np.abs(v0))])
    if not op._tridiagonal():
        # Wide stencils are not M-matrices; negative entries are tolerated
        # only at the rounding floor of the far tail.
        floor = 1e-12 * np.max(v)
        if np.min(v) < -floor:
            log.warning("ground state has negative entries down to %.3e", np.min(v))
            return v
        return np.maximum(np.abs(v), np.finfo(float).tiny)
    v = np.abs(v)
    if op._tridiagonal():
        # Inverse iteration with a shift below the spectrum: H - mu is an
        # M-matrix there, so every iterate stays entrywise positive.
        c0, c1, _ = op.fd_coefficients()
        n = op.grid.n
        mu = w0 - 1e-6 * max(1.0, abs(w0))
        ab = np.zeros((3, n))
        ab[0, 1:] = c1
        ab[1] = c0 + op.V - mu
        ab[2, :-1] = c1
        for _ in range(3):
            v = scipy.linalg.solve_banded((1, 1), ab, v)
            v /= np.linalg.norm(v)
    return v


def discrete_eigenpair(op: Hamiltonian, extrapolate: bool = True) -> SpectralData:
    """Lowest eigenpair of ``op`` with a positive, L^2-normalized eigenfunction.

    Raises NoBoundState when the operator has no negative eigenvalue.  With
    ``extrapolate`` the eigenvalue is also computed on the grid with 2n points
    and Richardson-extrapolated at the stencil order.
    """
    g = op.grid
    w, U = op.lowest(2)
    tol = 1e-9 * max(1.0, abs(float(op.V.min())))
    if w[0] >= -tol:
        raise NoBoundState(f"no negative eigenvalue (lowest = {w[0]:.3e})")
    n_neg = op.count_below(-tol)
    if n_neg > 1:
        log.warning("operator has %d negative eigenvalues; unsuitable for single-eigenvalue runs", n_neg)
    v = _positive_ground_state(op, float(w[0]), U[:, 0])
    phi = v / np.sqrt(g.h * np.sum(v * v))
    lam = -float(w[0])
    resid = l2_norm(op.apply(phi) + lam * phi, g)
    phi.flags.writeable = False
    lam_fine = lam_ext = float("nan")
    if extrapolate:
        fine = op.with_grid(g.refined(2))
        lam_fine = -float(fine.lowest(1)[0][0])
        if op.order is None:
            lam_ext = lam_fine
        else:
            r = g.h / fine.grid.h
            lam_ext = lam_fine + (lam_fine - lam) / (r ** op.order - 1)
    return SpectralData(g, lam, phi, n_neg, resid, lam_fine, lam_ext)


def project_p(psi, spec: SpectralData) -> np.ndarray:
    """P psi = <psi, phi> phi + <psi, i phi> i phi  (= (psi, phi) phi for real phi)."""
    if spec is None:
        raise ValidationError("projection needs SpectralData")
    psi = np.asarray(psi)
    coeff = spec.grid.h * (psi @ spec.phi)
    return np.multiply.outer(coeff, spec.phi) if psi.ndim > 1 else coeff * spec.phi


def project_pc(psi, spec: SpectralData) -> np.ndarray:
    return np.asarray(psi) - project_p(psi, spec)


class ChebyshevPropagator:
    """exp(-i dt H) by a Chebyshev expansion, accurate to rounding.

    The expansion length grows like dt * (spectral radius of H); use it for
    fixed short steps and apply repeatedly.
    """

    def __init__(self, op: Hamiltonian, dt: float, tol: float = 1e-17):
        if not np.isfinite(dt):
            raise ValidationError("propagation time must be finite")
        self.op = op
        self.dt = float(dt)
        lo, hi = op.spectral_bounds()
        self.center = 0.5 * (hi + lo)
        self.radius = 0.5 * (hi - lo)
        a = abs(self.dt) * self.radius
        kmax = int(a + 20 + 4 * a ** (1 / 3)) + 1
        ks = np.arange(kmax)
        jk = scipy.special.jv(ks, a)
        sgn = np.sign(self.dt) if self.dt else 1.0
        coef = np.where(ks == 0, 1.0, 2.0) * (-1j * sgn) ** ks * jk
        big = np.nonzero(np.abs(jk) > tol)[0]
        m = max(int(big[-1]) + 1 if big.size else 1, 2)
        self.coef = coef[:m] * np.exp(-1j * self.dt * self.center)
        if op.banded:
            c0, c1, c2 = op.fd_coefficients()
            self._diag = (c0 + op.V - self.center) / self.radius
            self._c1 = c1 / self.radius
            self._c2 = c2 / self.radius
            self._periodic = op.grid.boundary == "periodic"

    @property
    def terms(self) -> int:
        return len(self.coef)

    def _apply_scaled(self, v):
        return (self.op.apply(v) - self.center * v) / self.radius

    def __call__(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        if self.dt == 0:
            return psi.copy()
        if self.op.banded and psi.ndim == 1:
            re, im = chebyshev_stencil(np.ascontiguousarray(psi.real), np.ascontiguousarray(psi.imag),
                                       self._diag, self._c1, self._c2, self._periodic,
                                       np.ascontiguousarray(self.coef.real),
                                       np.ascontiguousarray(self.coef.imag))
            return re + 1j * im
        t0 = psi
        t1 = self._apply_scaled(psi)
        acc = self.coef[0] * t0 + self.coef[1] * t1
        for c in self.coef[2:]:
            t0, t1 = t1, 2 * self._apply_scaled(t1) - t0
            acc += c * t1
        return acc


def linear_propagator(psi, t, op: Hamiltonian, method: str = "eigen", max_step: float | None = None):
    """exp(-i t H) psi.

    ``eigen`` uses the cached full eigendecomposition and accepts an array of
    times (result has shape ``t.shape + psi.shape``).  ``chebyshev`` splits t
    into substeps of at most ``max_step`` (default: about 40 expansion terms
    per substep).
    """
    psi = np.asarray(psi, dtype=complex)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise ValidationError("propagation time must be finite")
    if method == "eigen":
        w, U = op.eigh()
        c = U.T @ psi.real + 1j * (U.T @ psi.imag)
        phase = np.exp(-1j * np.multiply.outer(t_arr, w))
        coeffs = phase * c
        out = coeffs @ U.T if coeffs.ndim > 1 else U @ coeffs
        return out
    if method == "chebyshev":
        if t_arr.ndim:
            return np.stack([linear_propagator(psi, float(tt), op, method, max_step) for tt in t_arr])
        tt = float(t_arr)
        if tt == 0:
            return psi.copy()
        lo, hi = op.spectral_bounds()
        step = max_step or 40.0 / (0.5 * (hi - lo))
        m = max(1, int(np.ceil(abs(tt) / step)))
        prop = ChebyshevPropagator(op, tt / m)
        for _ in range(m):
            psi = prop(psi)
        return psi
    raise ValidationError(f"unknown propagation method {method!r}")


def absorbing_profile(grid: Grid, start_fraction: float = 0.75, strength: float = 1.0) -> np.ndarray:
    """Quadratic ramp W >= 0 supported in |x| > start_fraction * L.

    Used as the damping term in i u_t = (H - i W) u.
    """
    if not 0 < start_fraction < 1:
        raise ValidationError("start_fraction must lie in (0, 1)")
    if strength < 0:
        raise ValidationError("sponge strength must be nonnegative")
    xs = start_fraction * grid.L
    r = np.clip((np.abs(grid.x) - xs) / (grid.L - xs), 0.0, None)
    return strength * r * r
