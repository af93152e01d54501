"""Jost solutions, transmission data, resolvent kernels and smoothing norms.

Jost profiles are computed in the factored form f(x, k) = exp(+-ikx) m(x, k),
where m solves m'' +- 2ik m' = V m and tends to 1 at the launch side.  All
kernels are sampled on the points of a :class:`Grid`; the grid spacing only
enters through quadrature.

Resolvent convention: R(z) = (H - z)^{-1} with
R(x, y) = -f_-(x_<) f_+(x_>) / W,  W = f_+' f_- - f_+ f_-'.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.signal

from .errors import NumericalFailure, ResonantPotential, ValidationError
from .operator_lab import (Grid, Hamiltonian, Potential, SpectralData, absorbing_profile,
                           project_pc)

log = logging.getLogger(__name__)

# sign applied to T/(2ik) f_- f_+ so that (H - lambda) R = +identity
RESOLVENT_SIGN = -1.0


def japanese(x) -> np.ndarray:
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


def launch_point(potential: Potential, floor: float = 1e-14) -> float:
    """Abscissa beyond which |V| < floor, used as the Jost launch point."""
    if potential.kind == "zero":
        return 1.0
    if potential.kind == "scaled_sech2":
        return 0.5 * potential.width * np.log(4.0 * potential.depth / floor)
    xs, vs = potential.table
    return float(max(abs(xs[0]), abs(xs[-1])))


@dataclass(frozen=True)
class JostSolution:
    k: complex
    side: str
    x: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    dm: np.ndarray = field(repr=False)
    residual: float = 0.0

    @property
    def _sign(self):
        return 1.0 if self.side == "plus" else -1.0

    @property
    def f(self) -> np.ndarray:
        return np.exp(1j * self._sign * self.k * self.x) * self.m

    @property
    def df(self) -> np.ndarray:
        return np.exp(1j * self._sign * self.k * self.x) * (self.dm + 1j * self._sign * self.k * self.m)


def compute_jost(potential: Potential, k: complex, side: str, x,
                 rtol: float = 1e-12, atol: float = 1e-14) -> JostSolution:
    """Jost profile m_side(x, k) sampled at the increasing abscissae ``x``.

    The plus profile is launched at +X with m = 1, m' = 0 and integrated
    leftward (minus: mirror image), where X is the :func:`launch_point`.
    """
    k = complex(k)
    if k.imag < 0:
        raise ValidationError("Jost solutions need Im k >= 0")
    if side not in ("plus", "minus"):
        raise ValidationError("side must be 'plus' or 'minus'")
    x = np.asarray(x, dtype=float)
    s = 1.0 if side == "plus" else -1.0
    X = launch_point(potential)
    m = np.ones(x.size, dtype=complex)
    dm = np.zeros(x.size, dtype=complex)
    if potential.kind == "zero":
        return JostSolution(k, side, x, m, dm, 0.0)
    inside = np.abs(x) < X
    t_eval = np.sort(x[inside])[::-1] if s > 0 else np.sort(x[inside])
    t_eval = np.append(t_eval, -s * X)

    def rhs(t, y):
        return [y[1], potential(t) * y[0] - 2j * s * k * y[1]]

    sol = scipy.integrate.solve_ivp(rhs, (s * X, -s * X), [1.0 + 0j, 0j], method="DOP853",
                                    t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise NumericalFailure(f"Jost integration failed at k={k}: {sol.message}")
    m_end, dm_end = sol.y[0][-1], sol.y[1][-1]
    order = np.argsort(sol.t[:-1])
    m[inside] = sol.y[0][:-1][order]
    dm[inside] = sol.y[1][:-1][order]
    # beyond the far launch point V = 0 and m'' = -2 i s k m' has a closed form
    far = s * x <= -X
    d = x[far] + s * X
    z = -2j * s * k
    mf, dmf = _far_field(np.array([m_end]), np.array([dm_end]), np.array([z]), d)
    m[far], dm[far] = mf[0], dmf[0]
    res = _ode_residual(x, m, dm, potential(x), s * k)
    return JostSolution(k, side, x, m, dm, res)


def _far_field(m_end, dm_end, z, d):
    """m and m' where V = 0: m'' = z m' continued from (m_end, dm_end) over offsets d."""
    z = np.asarray(z)[:, None]
    zd = z * d[None, :]
    safe = np.where(z == 0, 1.0, z)
    m = m_end[:, None] + dm_end[:, None] * np.where(z == 0, d[None, :], np.expm1(zd) / safe)
    return m, dm_end[:, None] * np.exp(zd)


def jost_batch(potential: Potential, ks, x, side: str, substeps: int = 8):
    """Jost profiles for many wavenumbers at once on a uniform grid ``x``.

    Classical RK4 with ``substeps`` steps per grid cell, vectorized over k.
    Cheaper but less accurate than :func:`compute_jost`; intended for
    frequency quadratures that need hundreds of wavenumbers.
    Returns arrays ``m, dm`` of shape (len(ks), len(x)).
    """
    ks = np.asarray(ks, dtype=complex)
    x = np.asarray(x, dtype=float)
    h = float(x[1] - x[0])
    s = 1.0 if side == "plus" else -1.0
    nk, n = ks.size, x.size
    if potential.kind == "zero":
        return np.ones((nk, n), dtype=complex), np.zeros((nk, n), dtype=complex)
    X = launch_point(potential)
    xs = x if s > 0 else -x[::-1]          # march toward decreasing xs
    i_start = min(int(np.searchsorted(xs, X)), n - 1)
    i_stop = max(int(np.searchsorted(xs, -X)) - 1, 0)
    dx = -h / substeps
    a = -2j * ks
    mc = np.ones(nk, dtype=complex)
    dc = np.zeros(nk, dtype=complex)
    mo = np.ones((nk, n), dtype=complex)
    do = np.zeros((nk, n), dtype=complex)
    fine = xs[i_start] + dx * 0.5 * np.arange(2 * substeps * (i_start - i_stop) + 1)
    vf = potential(s * fine)
    for i in range(i_start, i_stop, -1):
        base = 2 * substeps * (i_start - i)
        for j in range(substeps):
            v0, v1, v2 = vf[base + 2 * j], vf[base + 2 * j + 1], vf[base + 2 * j + 2]
            k1m, k1d = dc, v0 * mc + a * dc
            mm, dd = mc + 0.5 * dx * k1m, dc + 0.5 * dx * k1d
            k2m, k2d = dd, v1 * mm + a * dd
            mm, dd = mc + 0.5 * dx * k2m, dc + 0.5 * dx * k2d
            k3m, k3d = dd, v1 * mm + a * dd
            mm, dd = mc + dx * k3m, dc + dx * k3d
            k4m, k4d = dd, v2 * mm + a * dd
            mc = mc + dx / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
            dc = dc + dx / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        mo[:, i - 1] = mc
        do[:, i - 1] = dc
    if i_stop > 0:
        d = xs[:i_stop] - xs[i_stop]
        mo[:, :i_stop], do[:, :i_stop] = _far_field(mo[:, i_stop], do[:, i_stop], a, d)
    if s > 0:
        return mo, do
    # mirror back: m_-(x) = m~(-x), m_-'(x) = -m~'(-x)
    return mo[:, ::-1], -do[:, ::-1]


def _ode_residual(x, m, dm, v, sk):
    """Fourth-order consistency of (m, m') with m' = dm, dm' = V m - 2 i sk dm.

    Measured on uniform samples by the 5-point first difference; returns nan
    on non-uniform abscissae.
    """
    if x.size < 7:
        return 0.0
    h = np.diff(x)
    if not np.allclose(h, h[0]):
        return float("nan")
    h = h[0]

    def d1(f):
        return (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)

    r1 = d1(m) - dm[2:-2]
    r2 = d1(dm) - (v[2:-2] * m[2:-2] - 2j * sk * dm[2:-2])
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def wronskian_profile(jp: JostSolution, jm: JostSolution) -> np.ndarray:
    """W(x) = f_+' f_- - f_+ f_-' written in terms of m_+-, constant in x."""
    k = jp.k
    return jp.dm * jm.m - jp.m * jm.dm + 2j * k * jp.m * jm.m


def kernel_bound_constant(jost: JostSolution, potential: Potential, floor: float = 1e-12) -> float:
    """Smallest C with |m - 1| <= C <x^-+> <k>^{-1} |int_x^{+-inf} <y>|V| dy| on the samples."""
    x = jost.x
    dense = np.linspace(x.min(), x.max(), 8 * x.size)
    integrand = japanese(dense) * np.abs(potential(dense))
    cum = scipy.integrate.cumulative_trapezoid(integrand, dense, initial=0.0)
    cum = np.interp(x, dense, cum)
    if jost.side == "plus":
        tail = cum[-1] - cum
        xm = np.maximum(0.0, -x)
    else:
        tail = cum
        xm = np.maximum(0.0, x)
    den = japanese(xm) * tail / japanese(abs(jost.k))
    ok = den > floor
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(jost.m[ok] - 1) / den[ok]))


@dataclass(frozen=True)
class ScatteringSummary:
    k: complex
    W: complex
    T: complex
    R: complex
    w_variation: float

    def csv_row(self):
        return [self.k.real, self.W.real, self.W.imag, self.T.real, self.T.imag,
                abs(self.T), self.w_variation]


SCATTERING_CSV_HEADER = ["k", "re_W", "im_W", "re_T", "im_T", "abs_T", "W_variation"]


def _default_x(potential: Potential, n: int = 2049):
    X = launch_point(potential) + 5.0
    return np.linspace(-X, X, n)


def transmission(potential: Potential, k: complex, x=None) -> ScatteringSummary:
    """Wronskian, transmission T = 2ik/W and reflection coefficient at k."""
    x = _default_x(potential) if x is None else np.asarray(x, dtype=float)
    jp = compute_jost(potential, k, "plus", x)
    jm = compute_jost(potential, k, "minus", x)
    wx = wronskian_profile(jp, jm)
    X = launch_point(potential)
    interior = np.abs(x) <= X
    w = complex(np.mean(wx[interior]))
    scale = max(abs(w), np.finfo(float).tiny)
    var = float(np.max(np.abs(wx[interior] - w)) / scale)
    kk = complex(k)
    if kk != 0 and abs(w) < 1e-14:
        raise NumericalFailure(f"Wronskian vanishes at k={k}; near resonance or under-resolved")
    T = 2j * kk / w if w != 0 else complex("nan")
    R = complex("nan")
    if kk != 0 and kk.imag == 0:
        # m_- = 1/T + (R/T) e^{2ikx} beyond the right launch point
        R = T * complex(jm.dm[-1] * np.exp(-2j * kk * x[-1]) / (2j * kk))
    return ScatteringSummary(kk, w, T, R, var)


@dataclass(frozen=True)
class ResonanceReport:
    classification: str
    score: float
    W0: complex
    T_probe: complex


def resonance_indicator(potential: Potential, threshold: float = 1e-3, probe: float = 0.01,
                        x=None) -> ResonanceReport:
    """Zero-energy resonance test through |W(0)| / |W(1)|.

    ``generic`` means the non-resonance hypothesis holds.
    """
    w0 = transmission(potential, 0.0, x).W
    w1 = transmission(potential, 1.0, x).W
    score = abs(w0) / abs(w1)
    try:
        tp = transmission(potential, probe, x).T
    except NumericalFailure:
        tp = complex("nan")
    cls = "generic" if score > threshold else "resonant"
    return ResonanceReport(cls, float(score), w0, tp)


class ResolventKernel:
    """Kernel of R(k^2) = (H - k^2)^{-1} for Im k >= 0 (boundary value when real).

    ``sign='-'`` returns the conjugate kernel (the boundary value from below
    for real k).
    """

    def __init__(self, potential: Potential, k: complex, x, sign: str = "+",
                 profiles: tuple | None = None):
        if sign not in ("+", "-"):
            raise ValidationError("sign must be '+' or '-'")
        self.potential = potential
        self.k = complex(k)
        self.sign = sign
        self.x = np.asarray(x, dtype=float)
        self.h = float(self.x[1] - self.x[0])
        if profiles is None:
            self.jp = compute_jost(potential, self.k, "plus", self.x)
            self.jm = compute_jost(potential, self.k, "minus", self.x)
        else:
            (mp, dmp), (mm, dmm) = profiles
            self.jp = JostSolution(self.k, "plus", self.x, mp, dmp, float("nan"))
            self.jm = JostSolution(self.k, "minus", self.x, mm, dmm, float("nan"))
        wx = wronskian_profile(self.jp, self.jm)
        self.W = complex(np.mean(wx[np.abs(self.x) <= launch_point(potential)]))
        if self.W == 0:
            raise ResonantPotential(f"Wronskian vanishes at k={k}")
        self.metadata = {"sign_convention": RESOLVENT_SIGN, "k_real": self.k.real,
                         "k_imag": self.k.imag, "branch": sign}

    @property
    def lam(self) -> complex:
        return self.k * self.k

    def _conj(self, arr):
        return np.conj(arr) if self.sign == "-" else arr

    def column(self, j: int) -> np.ndarray:
        x, k = self.x, self.k
        d = np.abs(x - x[j])
        lo = np.where(x <= x[j], self.jm.m, self.jm.m[j])
        hi = np.where(x <= x[j], self.jp.m[j], self.jp.m)
        col = RESOLVENT_SIGN * np.exp(1j * k * d) * lo * hi / self.W
        return self._conj(col)

    def matrix(self) -> np.ndarray:
        x, k = self.x, self.k
        xi, yj = np.meshgrid(x, x, indexing="ij")
        left = xi <= yj
        mm = np.where(left, np.multiply.outer(self.jm.m, self.jp.m),
                      np.multiply.outer(self.jp.m, self.jm.m))
        r = RESOLVENT_SIGN * np.exp(1j * k * np.abs(xi - yj)) * mm / self.W
        return self._conj(r)

    def apply(self, v) -> np.ndarray:
        """(R v)(x_i) = h sum_j R(x_i, x_j) v_j in O(n)."""
        v = np.asarray(v, dtype=complex)
        if self.sign == "-":
            return np.conj(self._apply_plus(np.conj(v)))
        return self._apply_plus(v)

    def apply_both(self, v):
        """(R^+ v, R^- v) from a single set of Jost profiles."""
        v = np.asarray(v, dtype=complex)
        return self._apply_plus(v), np.conj(self._apply_plus(np.conj(v)))

    def _apply_plus(self, v):
        ker = self
        q = np.exp(1j * ker.k * ker.h)
        mm, mp = ker.jm.m, ker.jp.m
        # A_i = sum_{j<i} e^{ik(x_i-x_j)} m_-(x_j) v_j ; B_i = sum_{j>=i} e^{ik(x_j-x_i)} m_+(x_j) v_j
        a = scipy.signal.lfilter([0.0, q], [1.0, -q], mm * v)
        b = scipy.signal.lfilter([1.0], [1.0, -q], (mp * v)[::-1])[::-1]
        return RESOLVENT_SIGN * ker.h * (mp * a + mm * b) / ker.W

    def identity_error(self, op: Hamiltonian, columns) -> float:
        """max |h (H - k^2) R e_j - e_j| over interior rows of the chosen columns."""
        if op.grid.n != self.x.size or not np.allclose(op.grid.x, self.x):
            raise ValidationError("operator grid and kernel abscissae differ")
        worst = 0.0
        lam = self.lam if self.sign == "+" else np.conj(self.lam)
        for j in columns:
            col = self.column(j)
            r = op.grid.h * (op.apply(col) - lam * col)
            r[j] -= 1.0
            worst = max(worst, float(np.max(np.abs(r[2:-2]))))
        return worst


def _k_of(lam: float, a: float = 0.0) -> complex:
    z = complex(lam, a)
    k = np.sqrt(z)
    if k.imag < 0:
        k = -k
    return complex(k)


def resolvent_kernel(potential: Potential, lam: float, sign: str = "+", x=None, a: float = 0.0,
                     lam_floor: float = 1e-8) -> ResolventKernel:
    """Boundary (a = 0) or off-axis (a > 0) resolvent kernel at lam >= 0."""
    if lam < 0:
        raise ValidationError("resolvent_kernel expects lambda >= 0")
    x = _default_x(potential) if x is None else x
    if abs(lam) < lam_floor and a == 0.0:
        rep = resonance_indicator(potential)
        if rep.classification == "resonant":
            raise ResonantPotential(f"zero-energy resonance (score {rep.score:.2e})")
    return ResolventKernel(potential, _k_of(lam, a), x, sign)


def weighted_hs_norm(kernel: ResolventKernel, s: float, tau: float) -> float:
    """Hilbert-Schmidt norm of <x>^{-s} R(x, y) <y>^{-tau}, evaluated in O(n)."""
    x, h = kernel.x, kernel.h
    g = np.exp(-2.0 * kernel.k.imag * h)
    ws = japanese(x) ** (-2 * s)
    wt = japanese(x) ** (-2 * tau)
    am = np.abs(kernel.jm.m) ** 2
    ap = np.abs(kernel.jp.m) ** 2
    # x_i < y_j: |R|^2 = e^{-2 Im k (y-x)} |m_-(x)|^2 |m_+(y)|^2 / |W|^2
    left = scipy.signal.lfilter([0.0, g], [1.0, -g], ws * am)
    s1 = np.sum(wt * ap * left)
    right = scipy.signal.lfilter([0.0, g], [1.0, -g], wt * am)
    s2 = np.sum(ws * ap * right)
    s0 = np.sum(ws * wt * am * ap)
    return float(h * np.sqrt(s0 + s1 + s2) / abs(kernel.W))


def limiting_absorption_norm(potential: Potential, lam: float, a: float, s: float = 2.0,
                             tau: float = 2.0, x=None) -> float:
    """Weighted HS norm of R(lam + i a); a = 0 gives the boundary value."""
    if s <= 1.5 or tau <= 0.5:
        raise ValidationError("need s > 3/2 and tau > 1/2")
    if a < 0 or lam < 0:
        raise ValidationError("need lam >= 0 and a >= 0")
    x = np.linspace(-40.0, 40.0, 4097) if x is None else x
    return weighted_hs_norm(resolvent_kernel(potential, lam, "+", x, a), s, tau)


# --- time-domain smoothing experiments -----------------------------------

def random_pc_field(spec: SpectralData, rng: np.random.Generator, bumps: int = 3,
                    center_range: float = 5.0) -> np.ndarray:
    """Unit-norm P_c field: random sum of modulated Gaussians."""
    x = spec.grid.x
    u = np.zeros(x.size, dtype=complex)
    for _ in range(bumps):
        c = rng.uniform(-center_range, center_range)
        w = rng.uniform(0.5, 2.0)
        k0 = rng.uniform(-2.0, 2.0)
        amp = rng.normal() + 1j * rng.normal()
        u += amp * np.exp(-0.5 * ((x - c) / w) ** 2 + 1j * k0 * x)
    u = project_pc(u, spec)
    return u / np.sqrt(spec.grid.h * np.sum(np.abs(u) ** 2))


class DampedPropagator:
    """Eigen-decomposition of the non-Hermitian H - i W on a modest grid.

    The sponge W absorbs outgoing waves so long-time local norms saturate
    instead of recurring off the box walls.
    """

    def __init__(self, op: Hamiltonian, start_fraction: float = 0.5, strength: float = 1.0):
        self.op = op
        self.W = absorbing_profile(op.grid, start_fraction, strength)
        a = op.matrix() - 1j * np.diag(self.W)
        self.lam, self.S = scipy.linalg.eig(a)
        self._lu = scipy.linalg.lu_factor(self.S)

    def coefficients(self, f) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, np.asarray(f, dtype=complex))

    def weighted_gram(self, weight) -> np.ndarray:
        ws = weight[:, None] * self.S
        return self.op.grid.h * (ws.conj().T @ ws)


def _time_kernel(mu, T):
    """int_0^T exp(i mu t) dt, accurate for small |mu T|."""
    z = 1j * mu * T
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    out = np.where(small, T * (1 + z / 2 + z * z / 6), np.expm1(zs) / np.where(small, 1.0, 1j * mu))
    return out


@dataclass(frozen=True)
class SmoothingResult:
    ratio: float
    saturated: bool
    t_saturation: float
    curve_t: np.ndarray = field(repr=False)
    curve: np.ndarray = field(repr=False)


def kato_smoothing_ratios(prop: DampedPropagator, spec: SpectralData, fields, T: float = 200.0,
                          s: float = 2.0, samples: int = 101, mode_floor: float = 1e-13):
    """sqrt(int_0^T ||<x>^{-s} e^{-itH} P_c f||^2 dt) / ||f|| for each field.

    The time integral is evaluated in closed form in the damped eigenbasis.
    """
    if s <= 1.5:
        raise ValidationError("need s > 3/2")
    g = spec.grid
    fields = np.atleast_2d(np.asarray(fields, dtype=complex))
    norms = np.sqrt(g.h * np.sum(np.abs(fields) ** 2, axis=1))
    coeffs = prop.coefficients(project_pc(fields, spec).T)  # modes x fields
    keep = np.max(np.abs(coeffs), axis=1) > mode_floor * max(np.max(np.abs(coeffs)), 1e-300)
    c = coeffs[keep]
    lam = prop.lam[keep]
    gram = prop.weighted_gram(japanese(g.x) ** (-s))[np.ix_(keep, keep)]
    mu = np.conj(lam)[:, None] - lam[None, :]
    ts = np.linspace(0.0, T, samples)
    curves = np.zeros((fields.shape[0], samples))
    for i, t in enumerate(ts[1:], start=1):
        m = gram * _time_kernel(mu, t)
        curves[:, i] = np.real(np.einsum("af,ab,bf->f", np.conj(c), m, c))
    out = []
    for f_idx in range(fields.shape[0]):
        if norms[f_idx] == 0:
            out.append(SmoothingResult(0.0, True, 0.0, ts, curves[f_idx]))
            continue
        curve = np.maximum(curves[f_idx], 0.0)
        total = curve[-1]
        i80 = np.searchsorted(ts, 0.8 * T)
        saturated = bool(total == 0 or total - curve[i80] < 0.01 * total)
        hit = np.nonzero(total - curve <= 0.01 * total)[0]
        tsat = float(ts[hit[0]]) if hit.size else float(T)
        out.append(SmoothingResult(float(np.sqrt(total) / norms[f_idx]), saturated, tsat, ts, curve))
    return out


def kato_smoothing_ratio(prop: DampedPropagator, spec: SpectralData, f, T: float = 200.0,
                         s: float = 2.0) -> SmoothingResult:
    res = kato_smoothing_ratios(prop, spec, [f], T, s)[0]
    if not res.saturated:
        log.warning("smoothing integral not saturated by T=%g", T)
    return res


def _gaussian_window(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _duhamel_modes(lam, theta_fn, t_grid):
    """F_j(t) = int_{t_0}^t exp(-i lam_j (t - t')) theta(t') dt' on a uniform grid starting at t_0.

    Local Simpson rule on each step; stable for Im lam <= 0.
    """
    dt = t_grid[1] - t_grid[0]
    e1 = np.exp(-1j * lam * dt)
    eh = np.exp(-0.5j * lam * dt)
    th = theta_fn(t_grid)
    thm = theta_fn(t_grid[:-1] + 0.5 * dt)
    out = np.zeros((t_grid.size, lam.size), dtype=complex)
    acc = np.zeros(lam.size, dtype=complex)
    for i in range(1, t_grid.size):
        acc = e1 * acc + (dt / 6.0) * (e1 * th[i - 1] + 4.0 * eh * thm[i - 1] + th[i])
        out[i] = acc
    return out


@dataclass(frozen=True)
class DuhamelCheck:
    discrepancy: float
    refinement_gap: float
    lam_max: float
    t: np.ndarray = field(repr=False)
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    zero_source: bool = False


def duhamel_identity_check(op: Hamiltonian, spec: SpectralData, v, width: float = 0.5,
                           t_shift: float = 0.0, T: float = 12.0, nk: int = 65,
                           dt: float = 0.1, n_t: int = 121, s: float = 2.0,
                           tail: float = 1e-16) -> DuhamelCheck:
    """Compare both sides of the Duhamel/frequency identity for g(t) = theta(t) P_c v.

    theta is a Gaussian of the given width centered at 8*width + t_shift.  The
    left side 2 int_0^t e^{-i(t-t')H} g dt' is computed in the exact
    eigenbasis of ``op``; the right side U(t) + int_0^inf e^{-i(t-t')H} g dt'
    uses the Jost resolvent for U, integrated over all real lambda.  The
    half-line integral over t' < 0 is dropped (theta(0) ~ e^{-32}).
    """
    g = op.grid
    x = g.x
    v_in = np.asarray(v, dtype=complex)
    v = project_pc(v_in, spec)
    t0 = 8.0 * width + t_shift
    # output times sit on quadrature nodes (offsets from t_shift are exact multiples of dt)
    steps = int(round(T / dt))
    idx = np.unique(np.rint(np.linspace(0, steps, n_t)).astype(int))
    t_eval = t_shift + dt * idx
    weight = japanese(x) ** (-s)
    vnorm = np.sqrt(g.h * np.sum(np.abs(v) ** 2))
    lam_max = np.sqrt(2.0 * np.log(1.0 / tail)) / width
    # a source with no continuous component (up to rounding) is the zero source
    if vnorm <= 1e-12 * np.sqrt(g.h * np.sum(np.abs(v_in) ** 2)):
        z = np.zeros((t_eval.size, g.n), dtype=complex)
        return DuhamelCheck(0.0, 0.0, lam_max, t_eval, z, z, True)

    # box side
    w_all, U_all = op.eigh()
    c = U_all.T @ v.real + 1j * (U_all.T @ v.imag)
    keep = np.abs(c) > 1e-14 * np.max(np.abs(c))
    mu, Uk, ck = w_all[keep], U_all[:, keep], c[keep]
    # the quadrature starts at t_shift, where theta ~ e^{-32}; this keeps the
    # discretization identical under time translation
    t_quad = t_shift + dt * np.arange(steps + 1)
    F = _duhamel_modes(mu.astype(complex), lambda t: _gaussian_window(t, t0, width), t_quad)
    lhs = 2.0 * (F[idx] * ck) @ Uk.T
    theta_hat = width * np.sqrt(2 * np.pi) * np.exp(1j * mu * t0 - 0.5 * (mu * width) ** 2)
    plus_half = (np.exp(-1j * np.multiply.outer(t_eval, mu)) * theta_hat * ck) @ Uk.T

    # frequency side: lambda = +k^2 and lambda = -kappa^2
    kmax = np.sqrt(lam_max)
    ks = np.linspace(0.0, kmax, nk)
    pos = np.empty((nk, g.n), dtype=complex)
    neg = np.empty((nk, g.n), dtype=complex)
    allk = np.concatenate([ks, 1j * ks[1:]])
    mp, dmp = jost_batch(op.potential, allk, x, "plus")
    mm, dmm = jost_batch(op.potential, allk, x, "minus")
    for i, kk in enumerate(allk):
        ker = ResolventKernel(op.potential, kk, x, profiles=((mp[i], dmp[i]), (mm[i], dmm[i])))
        if i < nk:
            rp, rm = ker.apply_both(v)
            pos[i] = rp + rm
            if i == 0:
                neg[0] = 2.0 * project_pc(rp, spec)
        else:
            # P_c removes the pole of the kernel at the bound-state energy
            neg[i - nk + 1] = 2.0 * project_pc(ker.apply(v), spec)

    def u_of(stride):
        kk = ks[::stride]
        lp, ln = kk ** 2, -kk ** 2
        jac = 2.0 * kk
        ghat_p = width * np.exp(1j * lp * t0 - 0.5 * (lp * width) ** 2)
        ghat_n = width * np.exp(1j * ln * t0 - 0.5 * (ln * width) ** 2)
        ph_p = np.exp(-1j * np.multiply.outer(t_eval, lp)) * (ghat_p * jac)
        ph_n = np.exp(-1j * np.multiply.outer(t_eval, ln)) * (ghat_n * jac)
        ip = scipy.integrate.simpson(ph_p[:, :, None] * pos[::stride][None], x=kk, axis=1)
        im = scipy.integrate.simpson(ph_n[:, :, None] * neg[::stride][None], x=kk, axis=1)
        return (ip + im) / (np.sqrt(2 * np.pi) * 1j)

    U = u_of(1)
    U_coarse = u_of(2) if (nk - 1) % 4 == 0 else U
    rhs = U + plus_half

    def wnorm(a):
        return np.sqrt(scipy.integrate.trapezoid(g.h * np.sum(np.abs(weight * a) ** 2, axis=1), t_eval))

    den = wnorm(lhs)
    disc = float(wnorm(lhs - rhs) / den)
    gap = float(wnorm(U - U_coarse) / den)
    return DuhamelCheck(disc, gap, float(lam_max), t_eval, lhs, rhs)


def inhomogeneous_smoothing_ratio(prop: DampedPropagator, spec: SpectralData, v, center: float,
                                  width: float, s: float = 2.0, tau: float = 0.6,
                                  horizon: float = 100.0, dt: float = 0.05):
    """||int_0^t e^{-i(t-t')H} P_c g dt'||_{L^2_t L^{2,-s}} / ||g||_{L^2_t L^{2,tau}}.

    The source is separable, g(t, x) = theta(t) v(x) with a Gaussian theta.
    Returns (ratio, zero_source_flag).
    """
    if s <= 1.5 or tau <= 0.5:
        raise ValidationError("need s > 3/2 and tau > 1/2")
    g = spec.grid
    v = np.asarray(v, dtype=complex)
    src = np.sqrt(g.h * np.sum(np.abs(japanese(g.x) ** tau * v) ** 2) * width * np.sqrt(np.pi))
    if src == 0:
        return 0.0, True
    c = prop.coefficients(project_pc(v, spec))
    keep = np.abs(c) > 1e-13 * np.max(np.abs(c))
    steps = int(round((center + 6 * width + horizon) / dt))
    ts = np.linspace(0.0, steps * dt, steps + 1)
    F = _duhamel_modes(prop.lam[keep], lambda t: _gaussian_window(t, center, width), ts)
    gram = prop.weighted_gram(japanese(g.x) ** (-s))[np.ix_(keep, keep)]
    d = F * c[keep]
    dens = np.real(np.einsum("ta,ab,tb->t", np.conj(d), gram, d))
    out = np.sqrt(scipy.integrate.trapezoid(np.maximum(dens, 0.0), ts))
    return float(out / src), False
