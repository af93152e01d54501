"""Compiled inner loops.

The Chebyshev propagator for banded stencils dominates the cost of long
evolutions (tens of three/five-point matvecs per step); the pointwise
nonlinear substep is fused to avoid temporaries.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _fill_ghosts(buf, n, periodic):
    # buf holds n samples at offsets 2..n+1 with two ghost cells on each side
    if periodic:
        buf[0] = buf[n]
        buf[1] = buf[n + 1]
        buf[n + 2] = buf[2]
        buf[n + 3] = buf[3]
    else:
        # odd reflection about the zero ghost node
        buf[1] = 0.0
        buf[0] = -buf[2]
        buf[n + 2] = 0.0
        buf[n + 3] = -buf[n + 1]


@numba.njit(cache=True)
def chebyshev_stencil(vr, vi, diag, c1, c2, periodic, coef_r, coef_i):
    """Sum_k coef[k] T_k(X) v for X = diag + c1 (shift +-1) + c2 (shift +-2).

    Real and imaginary parts are carried separately so the loops stay in
    real arithmetic.
    """
    n = vr.shape[0]
    m = coef_r.shape[0]
    a0r = np.zeros(n + 4)
    a0i = np.zeros(n + 4)
    a1r = np.zeros(n + 4)
    a1i = np.zeros(n + 4)
    accr = np.empty(n)
    acci = np.empty(n)
    for i in range(n):
        a0r[i + 2] = vr[i]
        a0i[i + 2] = vi[i]
    _fill_ghosts(a0r, n, periodic)
    _fill_ghosts(a0i, n, periodic)
    for i in range(n):
        j = i + 2
        yr = diag[i] * a0r[j] + c1 * (a0r[j - 1] + a0r[j + 1]) + c2 * (a0r[j - 2] + a0r[j + 2])
        yi = diag[i] * a0i[j] + c1 * (a0i[j - 1] + a0i[j + 1]) + c2 * (a0i[j - 2] + a0i[j + 2])
        a1r[j] = yr
        a1i[j] = yi
        accr[i] = coef_r[0] * vr[i] - coef_i[0] * vi[i]
        acci[i] = coef_r[0] * vi[i] + coef_i[0] * vr[i]
        if m > 1:
            accr[i] += coef_r[1] * yr - coef_i[1] * yi
            acci[i] += coef_r[1] * yi + coef_i[1] * yr
    for k in range(2, m):
        _fill_ghosts(a1r, n, periodic)
        _fill_ghosts(a1i, n, periodic)
        cr = coef_r[k]
        ci = coef_i[k]
        for i in range(n):
            j = i + 2
            yr = 2.0 * (diag[i] * a1r[j] + c1 * (a1r[j - 1] + a1r[j + 1])
                        + c2 * (a1r[j - 2] + a1r[j + 2])) - a0r[j]
            yi = 2.0 * (diag[i] * a1i[j] + c1 * (a1i[j - 1] + a1i[j + 1])
                        + c2 * (a1i[j - 2] + a1i[j + 2])) - a0i[j]
            a0r[j] = yr
            a0i[j] = yi
            accr[i] += cr * yr - ci * yi
            acci[i] += cr * yi + ci * yr
        a0r, a1r = a1r, a0r
        a0i, a1i = a1i, a0i
    return accr, acci


@numba.njit(cache=True)
def pointwise_step(u, damp, vphase, use_vphase, dt, sigma, alpha):
    """damp * rot(damp * u) with rot(v) = v exp(-i dt sigma |v|^(2 alpha)), times vphase."""
    n = u.shape[0]
    out = np.empty(n, dtype=np.complex128)
    for i in range(n):
        v = damp[i] * u[i]
        if sigma != 0.0:
            s = v.real * v.real + v.imag * v.imag
            if alpha == 0.5:
                a = np.sqrt(s)
            elif alpha == 1.0:
                a = s
            else:
                a = s ** alpha
            ang = -dt * sigma * a
            v = v * complex(np.cos(ang), np.sin(ang))
        if use_vphase:
            v = v * vphase[i]
        out[i] = damp[i] * v
    return out
