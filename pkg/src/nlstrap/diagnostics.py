"""Cutoffs, weighted norms, the virial functional and run-level detectors.

The virial multiplier is discretized as S_A = phi_A D + D phi_A with the
skew-symmetric centered derivative D; S_A is then exactly skew-symmetric on
the grid, so I_A vanishes on real fields and is phase invariant to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .operator_lab import Grid, SpectralData, derivative, project_pc

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(40)


def _smoothstep_tail(s):
    """q(s) = 1 - s^3 (10 - 15 s + 6 s^2), decreasing from 1 to 0 on [0, 1]."""
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def chi(x):
    """Even C^2 cutoff: 1 on [-1, 1], 0 outside [-2, 2]."""
    ax = np.abs(np.asarray(x, dtype=float))
    return np.where(ax <= 1.0, 1.0, np.where(ax >= 2.0, 0.0, _smoothstep_tail(np.clip(ax - 1.0, 0, 1))))


def chi_prime(x):
    x = np.asarray(x, dtype=float)
    s = np.clip(np.abs(x) - 1.0, 0.0, 1.0)
    dq = -30.0 * s * s * (1.0 - s) ** 2
    return np.where((np.abs(x) > 1) & (np.abs(x) < 2), np.sign(x) * dq, 0.0)


def zeta(x, A: float):
    ax = np.abs(np.asarray(x, dtype=float))
    return np.exp(-ax / A * (1.0 - chi(ax)))


def phi_A(x, A: float):
    """int_0^x zeta_A^2: Gauss-Legendre on the transition layer, closed form beyond."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.array(ax, dtype=float)
    mid = (ax > 1.0) & (ax < 2.0)
    if np.any(mid):
        b = ax[mid]
        half = 0.5 * (b - 1.0)
        nodes = 1.0 + half[:, None] * (_GL_NODES[None, :] + 1.0)
        out[mid] = 1.0 + half * (zeta(nodes, A) ** 2 @ _GL_WEIGHTS)
    far = ax >= 2.0
    if np.any(far):
        nodes = 1.5 + 0.5 * _GL_NODES
        at2 = 1.0 + 0.5 * (zeta(nodes, A) ** 2 @ _GL_WEIGHTS)
        out[far] = at2 + 0.5 * A * (np.exp(-4.0 / A) - np.exp(-2.0 * ax[far] / A))
    return np.sign(x) * out


def japanese(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass(frozen=True)
class WeightFamily:
    grid: Grid
    A: float
    B: float
    kappa: float
    a: float
    chi: np.ndarray = field(repr=False)
    chi_B: np.ndarray = field(repr=False)
    zeta_A: np.ndarray = field(repr=False)
    phi_A: np.ndarray = field(repr=False)
    sech_A: np.ndarray = field(repr=False)
    sech_kappa: np.ndarray = field(repr=False)
    exp_a: np.ndarray = field(repr=False)

    @property
    def phi_A_prime(self):
        return self.zeta_A ** 2

    def with_B(self, B: float, A: float | None = None) -> "WeightFamily":
        return build_weights(B ** 3 if A is None else A, B, self.kappa, self.a, self.grid)


def build_weights(A: float | None, B: float, kappa: float, a: float, grid: Grid) -> WeightFamily:
    """Sample every weight on the grid; ``A=None`` means A = B^3."""
    if A is None:
        A = B ** 3
    if not A >= 4:
        raise ValidationError("A must be at least 4")
    if not B >= 2:
        raise ValidationError("B must be at least 2")
    if not 0 < kappa < 1:
        raise ValidationError("kappa must lie in (0, 1)")
    if not a > 0:
        raise ValidationError("a must be positive")
    x = grid.x
    return WeightFamily(grid, float(A), float(B), float(kappa), float(a), chi(x), chi(x / B),
                        zeta(x, A), phi_A(x, A), 1.0 / np.cosh(2.0 * x / A), 1.0 / np.cosh(kappa * x),
                        np.exp(-a * japanese(x)))


def _norm(v, grid):
    v = np.asarray(v)
    return np.sqrt(grid.h * np.sum(np.abs(v) ** 2, axis=-1))


@dataclass(frozen=True)
class NormSuite:
    sigma_A: np.ndarray
    sigma_tilde: np.ndarray
    l2s: np.ndarray
    exp_h1: np.ndarray
    I_A: np.ndarray


def exp_weighted_h1(eta, W: WeightFamily):
    """||e^{-a<x>} eta||_{H^1} with the product-rule derivative."""
    g = W.grid
    x = g.x
    dw = -W.a * x / japanese(x) * W.exp_a
    d = dw * eta + W.exp_a * derivative(eta, g)
    return np.sqrt(_norm(W.exp_a * eta, g) ** 2 + _norm(d, g) ** 2)


def S_A(eta, W: WeightFamily):
    g = W.grid
    return W.phi_A * derivative(eta, g) + derivative(W.phi_A * eta, g)


def virial_I(eta, W: WeightFamily):
    """I_A = 1/2 <i eta, S_A eta> (real pairing); vectorized over leading axes."""
    s = S_A(eta, W)
    return 0.5 * W.grid.h * np.sum(np.real(1j * eta * np.conj(s)), axis=-1)


def norm_suite(eta, W: WeightFamily, s: float = 2.0) -> NormSuite:
    """Per-field norms; ``eta`` may be one field or a stack of snapshots."""
    eta = np.asarray(eta, dtype=complex)
    g = W.grid
    if eta.shape[-1] != g.n:
        raise ValidationError("field does not match the weight grid")
    deta = derivative(eta, g)
    sig_a = _norm(W.sech_A * deta, g) + _norm(W.sech_A * eta, g) / W.A
    return NormSuite(sig_a, _norm(W.sech_kappa * eta, g), _norm(japanese(g.x) ** s * eta, g),
                     exp_weighted_h1(eta, W), virial_I(eta, W))


def virial_bound_constant(eta, W: WeightFamily) -> float:
    """|I_A| / (A ||eta||^2); Cauchy-Schwarz gives at most max|phi_A|/A * ||D|| terms."""
    n2 = _norm(eta, W.grid) ** 2
    return float(np.max(np.abs(virial_I(eta, W)) / (W.A * np.where(n2 > 0, n2, np.inf))))


def eta_dot(eta, z, w, branch, sponge=None):
    """eta' from i eta' + i DQ[z] w = H eta + f(Q + eta) - f(Q) - i W u."""
    pt = branch.point(z)
    u = pt.Q + eta
    rhs = branch.op.apply(eta) + branch.nl.f(u) - branch.nl.f(pt.Q)
    if sponge is not None:
        rhs = rhs - 1j * sponge * u
    return -1j * rhs - (pt.D1Q * w.real + pt.D2Q * w.imag)


def virial_rate(t, etas, W: WeightFamily, zs=None, ws=None, branch=None, sponge=None):
    """(I_A, dI/dt by differences, dI/dt = -<eta', i S_A eta> or None)."""
    from .modulation import time_derivative

    I = virial_I(etas, W)
    fd = time_derivative(t, I)
    inst = None
    if branch is not None and zs is not None and ws is not None:
        inst = np.empty(len(t))
        for k, (e, z, w) in enumerate(zip(etas, zs, ws)):
            ed = eta_dot(e, z, w, branch, sponge)
            inst[k] = -W.grid.h * np.sum(np.real(ed * np.conj(1j * S_A(e, W))))
    return I, fd, inst


@dataclass(frozen=True)
class VirialReport:
    lhs: float
    rhs: float
    sup_I: float
    C_emp: float
    status: str
    sigma_A: np.ndarray = field(repr=False)
    sigma_tilde: np.ndarray = field(repr=False)
    I_A: np.ndarray = field(repr=False)


def virial_inequality_check(t, etas, residual, W: WeightFamily) -> VirialReport:
    """C_emp = int ||eta||_{Sigma_A}^2 / (2 sup|I_A| + int (||eta||_~^2 + |w|^2))."""
    t = np.asarray(t, dtype=float)
    ns = norm_suite(etas, W)
    lhs = float(np.trapezoid(ns.sigma_A ** 2, t))
    sup_i = float(np.max(np.abs(ns.I_A)))
    rhs = 2.0 * sup_i + float(np.trapezoid(ns.sigma_tilde ** 2 + np.abs(residual) ** 2, t))
    if rhs == 0.0 and lhs == 0.0:
        c, status = 0.0, "0/0"
    elif rhs == 0.0:
        c, status = float("inf"), "anomaly"
    else:
        c, status = lhs / rhs, "ok"
    return VirialReport(lhs, rhs, sup_i, c, status, ns.sigma_A, ns.sigma_tilde, ns.I_A)


def random_compact_fields(grid: Grid, rng: np.random.Generator, count: int, support: float = 10.0):
    """Smooth complex fields supported in |x| < support (bump times random modes)."""
    x = grid.x
    out = np.zeros((count, grid.n), dtype=complex)
    for k in range(count):
        c = rng.uniform(-0.5, 0.5) * support
        r = rng.uniform(0.2, 0.5) * support
        y = (x - c) / r
        inside = np.abs(y) < 1
        bump = np.zeros_like(x)
        bump[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
        modes = sum((rng.normal() + 1j * rng.normal()) * np.exp(1j * rng.uniform(-3, 3) * x)
                    for _ in range(3))
        out[k] = bump * modes
    return out


@dataclass(frozen=True)
class CommutatorProbe:
    C: float
    C_over_A: float
    values: np.ndarray = field(repr=False)


def commutator_probe(fields, W: WeightFamily, op) -> CommutatorProbe:
    """Smallest C with -<eta'', S_A eta> - 2||(zeta_A eta)'||^2 >= -(C/A) ||eta||_~^2."""
    g = W.grid
    vals = []
    for eta in np.atleast_2d(fields):
        lap = -op.apply_kinetic(eta)
        lhs = -g.h * np.sum(np.real(lap * np.conj(S_A(eta, W))))
        pos = 2.0 * _norm(derivative(W.zeta_A * eta, g), g) ** 2
        den = _norm(W.sech_kappa * eta, g) ** 2
        if den > 0:
            vals.append(W.A * (pos - lhs) / den)
    vals = np.array(vals)
    C = float(max(vals.max(), 0.0)) if vals.size else 0.0
    return CommutatorProbe(C, C / W.A, vals)


@dataclass(frozen=True)
class RatioReport:
    max: float
    ratios: np.ndarray = field(repr=False)
    dropped: int


def pure_power_estimate_check(fields, W: WeightFamily, p: float, floor: float = 1e-300) -> RatioReport:
    """int |eta|^{p+1} zeta_A^2 / (A^2 ||eta||_inf^{p-1} ||(zeta_A eta)'||^2) per sample."""
    g = W.grid
    rs, dropped = [], 0
    for eta in np.atleast_2d(fields):
        num = g.h * np.sum(np.abs(eta) ** (p + 1) * W.zeta_A ** 2)
        den = W.A ** 2 * np.max(np.abs(eta)) ** (p - 1) * _norm(derivative(W.zeta_A * eta, g), g) ** 2
        if den <= floor:
            dropped += 1
            continue
        rs.append(num / den)
    rs = np.array(rs)
    return RatioReport(float(rs.max()) if rs.size else 0.0, rs, dropped)


@dataclass(frozen=True)
class LocalizedReport:
    B: float
    w_norm: float
    reconstruction_constant: float
    w_series: np.ndarray = field(repr=False)


def localized_component_series(t, etas, W: WeightFamily, spec: SpectralData, s: float = 2.0) -> LocalizedReport:
    """w = P_c(chi_B eta): ||w||_{L^2(I, L^{2,-s})} and the reconstruction constant
    max_t ||eta||_~ / (||chi_B eta||_~ + ||eta||_{Sigma_A} / A)."""
    if not s > 1.5:
        raise ValidationError("s must exceed 3/2")
    g = W.grid
    etas = np.atleast_2d(etas)
    v = W.chi_B * etas
    w = project_pc(v, spec)
    wn = _norm(japanese(g.x) ** (-s) * w, g)
    t = np.asarray(t, dtype=float)
    total = float(np.sqrt(np.trapezoid(wn ** 2, t))) if t.size > 1 else float(wn[0])
    ns = norm_suite(etas, W)
    den = _norm(W.sech_kappa * v, g) + ns.sigma_A / W.A
    num = ns.sigma_tilde
    ok = den > 0
    c = float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
    return LocalizedReport(W.B, total, c, wn)


def cutoff_projection_defect(eta, W: WeightFamily, spec: SpectralData) -> float:
    """||P_c(chi_B eta) - chi_B eta|| / ||eta||_~ (for eta in the continuous subspace)."""
    g = W.grid
    v = W.chi_B * eta
    d = _norm(project_pc(v, spec) - v, g)
    den = _norm(W.sech_kappa * eta, g)
    return float(d / den) if den > 0 else 0.0


def monotone_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


@dataclass(frozen=True)
class ConvergenceReport:
    r_plus: float
    r_deviation: float
    a_ratio: float
    phase_error: float
    window_end: float
    saturation_increment: float


def convergence_detectors(traj, branch, W: WeightFamily, radius: float = 5.0,
                          window_end: float | None = None, min_samples: int = 8) -> ConvergenceReport:
    """r_+ and its spread over the final quarter, a(t) final/peak, the phase-profile
    check sup_{|x|<=radius} |u e^{-i arg z} - Q[r_+]| and the tail increment of
    int ||e^{-a<x>} eta||_{H^1}^2 dt over the last tenth of the window."""
    end = traj.trustworthy_end if window_end is None else window_end
    sel = traj.t <= end + 1e-12
    if sel.sum() < min_samples:
        raise ValidationError("trustworthy window too short for convergence statistics")
    t = traj.t[sel]
    z = traj.z[sel]
    etas = traj.eta[sel]
    g = W.grid
    q = max(len(t) // 4, 1)
    az = np.abs(z[-q:])
    r_plus = float(np.mean(az))
    dev = float(np.max(np.abs(az - r_plus)))
    a = 0.5 * _norm(W.exp_a * etas, g) ** 2
    peak = a.max()
    a_ratio = float(a[-1] / peak) if peak > 0 else 0.0
    near = np.abs(g.x) <= radius
    theta = np.angle(z[-1]) if z[-1] != 0 else 0.0
    prof = branch(r_plus) if r_plus > 0 else np.zeros(g.n)
    phase = float(np.max(np.abs(traj.u[sel][-1] * np.exp(-1j * theta) - prof)[near]))
    h1 = exp_weighted_h1(etas, W) ** 2
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (h1[1:] + h1[:-1]) * np.diff(t))])
    k = int(0.9 * (len(t) - 1))
    inc = float((cum[-1] - cum[k]) / cum[-1]) if cum[-1] > 0 else 0.0
    return ConvergenceReport(r_plus, dev, a_ratio, phase, float(t[-1]), inc)


def uniformity_constant(zs, branch, a: float) -> float:
    """Smallest C with max(|Q[z]|, |Q[z]|^{2p-1}) <= C e^{-2a<x>} |z| over the series."""
    x = branch.op.grid.x
    w = np.exp(-2.0 * a * japanese(x))
    c = 0.0
    for z in np.atleast_1d(zs):
        r = abs(z)
        if r == 0:
            continue
        q = np.abs(branch.profile(r).q)
        m = np.maximum(q, q ** (2 * branch.nl.p - 1))
        c = max(c, float(np.max(m / (w * r))))
    return c


def series_rows(t, ns: NormSuite, extra: dict | None = None):
    """Rows for a per-snapshot CSV: t, Sigma_A, Sigma~, L^{2,s}, exp-H^1, I_A, extras."""
    cols = [np.asarray(t), ns.sigma_A, ns.sigma_tilde, ns.l2s, ns.exp_h1, ns.I_A]
    header = ["t", "sigma_A", "sigma_tilde", "l2s", "exp_h1", "I_A"]
    for k, v in (extra or {}).items():
        header.append(k)
        cols.append(np.asarray(v))
    return header, list(zip(*cols))
