"""Time integration of i u_t = H u + f(u) - i W u on the grid.

``strang_split``: L(dt/2) N(dt) L(dt/2), with L the linear flow (Chebyshev by
default, exact to rounding) and N the pointwise nonlinear phase rotation,
wrapped in the sponge damping.  Consecutive linear half steps between
snapshots are merged.

``crank_nicolson``: the mass- and energy-conserving implicit midpoint scheme
with the difference-quotient nonlinearity
(G(|v|^2) - G(|u|^2)) / (|v|^2 - |u|^2) * (u + v) / 2, solved by fixed point.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import __version__
from .errors import MissingInput, NLSTrapError, NumericalFailure, ValidationError
from ._kernels import pointwise_step
from .ground_states import BoundStateBranch, Nonlinearity, energy_mass
from .modulation import decompose
from .operator_lab import ChebyshevPropagator, Hamiltonian, absorbing_profile, l2_norm

log = logging.getLogger(__name__)

SCHEMES = ("strang_split", "crank_nicolson")
LINEAR_METHODS = ("chebyshev", "eigen", "fourier")


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    T_final: float = 10.0
    snapshot_stride: int = 50
    scheme: str = "strang_split"
    linear: str = "chebyshev"
    sponge_enabled: bool = False
    sponge_start_fraction: float = 0.75
    sponge_strength: float = 1.0
    decompose: bool = True
    wavefront_tol: float = 1e-3

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("dt must be positive")
        if not self.T_final >= self.dt:
            raise ValidationError("T_final must be at least dt")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValidationError("snapshot_stride must be a positive integer")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}")
        if self.linear not in LINEAR_METHODS:
            raise ValidationError(f"linear method must be one of {LINEAR_METHODS}")
        if self.sponge_enabled and not 0.5 <= self.sponge_start_fraction < 1:
            raise ValidationError("sponge start_fraction must lie in [0.5, 1)")
        if self.sponge_strength < 0:
            raise ValidationError("sponge strength must be nonnegative")

    @property
    def steps(self) -> int:
        return int(round(self.T_final / self.dt))

    def to_dict(self):
        return dataclasses.asdict(self)


class Stepper:
    """Advances fields by whole steps; reusable across runs with the same setup."""

    def __init__(self, op: Hamiltonian, nl: Nonlinearity, cfg: EvolutionConfig):
        self.op = op
        self.nl = nl
        self.cfg = cfg
        self.dt = cfg.dt
        g = op.grid
        self.W = (absorbing_profile(g, cfg.sponge_start_fraction, cfg.sponge_strength) if cfg.sponge_enabled
                  else np.zeros(g.n))
        self._damp = np.exp(-0.5 * self.dt * self.W)
        if cfg.scheme == "strang_split":
            self._setup_split()
        else:
            self._setup_cn()

    # -- Strang splitting ---------------------------------------------------
    def _setup_split(self):
        op, dt = self.op, self.dt
        if self.cfg.linear == "chebyshev":
            full, half = ChebyshevPropagator(op, dt), ChebyshevPropagator(op, 0.5 * dt)
            self._lin = {1.0: full, 0.5: half}
            self._vphase = None
        elif self.cfg.linear == "eigen":
            w, U = op.eigh()
            self._U = U
            self._lin = {f: self._eigen_factory(w, f * dt) for f in (1.0, 0.5)}
            self._vphase = None
        else:
            if op.banded:
                h = op.grid.h
                if dt >= h * h / np.pi:
                    log.warning("dt=%g exceeds h^2/pi=%g for the finite-difference kinetic split",
                                dt, h * h / np.pi)
            sym = op.kinetic_symbol
            self._lin = {f: self._kinetic_factory(np.exp(-1j * f * dt * sym)) for f in (1.0, 0.5)}
            self._vphase = np.exp(-1j * dt * op.V)
        self._vp = self._vphase if self._vphase is not None else np.ones(op.grid.n, dtype=complex)

    def _eigen_factory(self, w, tau):
        ph = np.exp(-1j * tau * w)
        U = self._U

        def apply(u):
            c = U.T @ u.real + 1j * (U.T @ u.imag)
            return U @ (ph * c)
        return apply

    def _kinetic_factory(self, mult):
        def apply(u):
            return self.op.kinetic_function(u, lambda s: mult)
        return apply

    def _nonlinear(self, u):
        return pointwise_step(u, self._damp, self._vp, self._vphase is not None, self.dt,
                              float(self.nl.sigma), self.nl.alpha)

    def _split_steps(self, u, m):
        u = self._lin[0.5](u)
        for j in range(m):
            u = self._nonlinear(u)
            u = self._lin[1.0](u) if j < m - 1 else self._lin[0.5](u)
        return u

    # -- Crank-Nicolson -----------------------------------------------------
    def _setup_cn(self):
        a = scipy.sparse.csc_matrix(self.op.sparse(), dtype=complex) - 1j * scipy.sparse.diags(self.W)
        eye = scipy.sparse.identity(self.op.grid.n, format="csc", dtype=complex)
        self._cn_lhs = scipy.sparse.linalg.splu((eye + 0.5j * self.dt * a).tocsc())
        self._cn_rhs = (eye - 0.5j * self.dt * a).tocsr()

    def _quotient(self, u, v):
        su, sv = np.abs(u) ** 2, np.abs(v) ** 2
        ds = sv - su
        close = np.abs(ds) <= 1e-12 * np.maximum(su, 1e-300)
        safe = np.where(close, 1.0, ds)
        q = np.where(close, self.nl.g(0.5 * (su + sv)), (self.nl.G(sv) - self.nl.G(su)) / safe)
        return q * 0.5 * (u + v)

    def _cn_step(self, u, tol=1e-14, max_iter=50):
        base = self._cn_rhs @ u
        v = u
        prev = np.inf
        for _ in range(max_iter):
            v_new = self._cn_lhs.solve(base - 1j * self.dt * self._quotient(u, v))
            diff = np.max(np.abs(v_new - v)) / max(np.max(np.abs(v_new)), 1e-300)
            # converged, or stalled at the rounding floor
            if diff <= tol or (diff <= 1e-11 and diff >= 0.5 * prev):
                return v_new
            prev = diff
            v = v_new
        raise NumericalFailure("Crank-Nicolson fixed point did not converge", last_good=u)

    # -- public -------------------------------------------------------------
    def advance(self, u, m: int = 1):
        u = np.asarray(u, dtype=complex)
        if self.cfg.scheme == "strang_split":
            return self._split_steps(u, m)
        for _ in range(m):
            u = self._cn_step(u)
        return u


def step(u, op: Hamiltonian, nl: Nonlinearity, cfg: EvolutionConfig, stepper: Stepper | None = None):
    """One time step of size cfg.dt."""
    return (stepper or Stepper(op, nl, cfg)).advance(u, 1)


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray
    z: np.ndarray
    eta: np.ndarray | None
    mass: np.ndarray
    energy: np.ndarray
    decomposition_residual: np.ndarray
    metadata: dict = field(default_factory=dict)
    wavefront_time: float = float("inf")
    trustworthy_end: float = float("inf")
    truncated: bool = False

    def __len__(self):
        return self.t.size

    @property
    def abs_z(self):
        return np.abs(self.z)


def _wavefront_region(grid, cfg):
    edge = cfg.sponge_start_fraction * grid.L if cfg.sponge_enabled else 0.75 * grid.L
    return np.abs(grid.x) >= edge, edge


def run(u0, op: Hamiltonian, nl: Nonlinearity, cfg: EvolutionConfig,
        branch: BoundStateBranch | None = None, c0: float = 0.2, obs_radius: float = 5.0,
        metadata: dict | None = None) -> Trajectory:
    """Evolve u0 and record snapshots every ``cfg.snapshot_stride`` steps."""
    g = op.grid
    u = np.asarray(u0, dtype=complex).copy()
    if u.shape != (g.n,):
        raise ValidationError("initial field does not match the grid")
    if not np.all(np.isfinite(u)):
        raise ValidationError("initial field has non-finite samples")
    use_dec = cfg.decompose and branch is not None
    stepper = Stepper(op, nl, cfg)
    nsnap = cfg.steps // cfg.snapshot_stride + 1
    ts, us, zs, etas, ms, es, res = [], [], [], [], [], [], []
    outer, edge = _wavefront_region(g, cfg)
    scale = np.max(np.abs(u))
    wavefront = float("inf")
    truncated = False
    for i in range(nsnap):
        t = i * cfg.snapshot_stride * cfg.dt
        if i > 0:
            prev = u
            u = stepper.advance(u, cfg.snapshot_stride)
            if not np.all(np.isfinite(u)):
                raise NumericalFailure(f"non-finite field at t={t:g}", last_good=prev)
        if use_dec:
            try:
                st = decompose(u, branch, c0=c0, t=t)
            except NLSTrapError as exc:
                log.warning("decomposition failed at t=%g (%s); truncating run", t, exc)
                truncated = True
                break
            zs.append(st.z)
            etas.append(st.eta)
            res.append(st.residual_norm)
        en, ma = energy_mass(u, op, nl)
        ts.append(t)
        us.append(u)
        ms.append(ma)
        es.append(en)
        if wavefront == float("inf") and scale > 0 and np.max(np.abs(u[outer])) > cfg.wavefront_tol * scale:
            wavefront = t
    if cfg.sponge_enabled:
        trust = float(ts[-1]) if ts else 0.0
    elif wavefront < float("inf") and wavefront > 0:
        trust = wavefront * (2 * g.L - obs_radius) / edge
    else:
        trust = float(ts[-1]) if ts else 0.0
    meta = {
        "version": __version__,
        "grid": {"L": g.L, "n": g.n, "boundary": g.boundary},
        "potential": {"kind": op.potential.kind, "depth": op.potential.depth,
                      "width": op.potential.width},
        "stencil": op.stencil,
        "nonlinearity": {"p": nl.p, "sigma": nl.sigma},
        "evolution": cfg.to_dict(),
    }
    if branch is not None:
        meta["branch"] = branch.metadata
    meta.update(metadata or {})
    return Trajectory(np.array(ts), np.array(us), np.array(zs, dtype=complex),
                      np.array(etas) if use_dec else None, np.array(ms), np.array(es),
                      np.array(res), meta, wavefront, min(trust, float(ts[-1]) if ts else 0.0),
                      truncated)


# --- post-processing ---------------------------------------------------------

def mass_equipartition_check(traj: Trajectory, branch: BoundStateBranch):
    """Q(u0) - Q(Q[z(t)]) - Q(eta(t)) per snapshot."""
    g = branch.op.grid
    m0 = 0.5 * l2_norm(traj.u[0], g) ** 2
    out = np.empty(len(traj))
    for i, (z, eta) in enumerate(zip(traj.z, traj.eta)):
        out[i] = m0 - 0.5 * l2_norm(branch(z), g) ** 2 - 0.5 * l2_norm(eta, g) ** 2
    return out


def japanese(x):
    return np.sqrt(1.0 + x * x)


def local_decay_series(traj: Trajectory, grid, a: float = 0.2):
    """(a(t) = 1/2 ||e^{-a<x>} eta||^2, ||e^{-a<x>} eta||_{H^1}^2) per snapshot."""
    from .operator_lab import derivative

    w = np.exp(-a * japanese(grid.x))
    dw = -a * grid.x / japanese(grid.x) * w
    eta = traj.eta
    l2 = grid.h * np.sum(np.abs(w * eta) ** 2, axis=1)
    d = dw * eta + w * derivative(eta, grid)
    h1 = l2 + grid.h * np.sum(np.abs(d) ** 2, axis=1)
    return 0.5 * l2, h1


def conservation_drift(traj: Trajectory):
    """(max relative mass drift, max relative energy drift)."""
    m0, e0 = traj.mass[0], traj.energy[0]
    dm = float(np.max(np.abs(traj.mass - m0)) / m0) if m0 else 0.0
    de = float(np.max(np.abs(traj.energy - e0)) / abs(e0)) if e0 else 0.0
    return dm, de


def sponge_flux(u, grid, x_s):
    """Outward probability flux 2 Im(conj(u) u_x) through x = +-x_s (sum of both sides)."""
    from .operator_lab import derivative

    du = derivative(u, grid)
    j = 2.0 * np.imag(np.conj(u) * du)
    jr = np.interp(x_s, grid.x, j)
    jl = np.interp(-x_s, grid.x, j)
    return jr - jl


# --- persistence -------------------------------------------------------------

CSV_COLUMNS = ["t", "re_z", "im_z", "abs_z", "mass", "energy", "decomposition_residual"]


def _fmt(v):
    return repr(float(v))


def write_csv(path, header, rows, preamble: str | None = None):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return header, data


def write_fields(path, fields, L: float, dt: float):
    """Flat binary dump: little-endian header (int64 n, float64 L, float64 dt,
    int64 count) followed by count * n interleaved (re, im) float64 pairs.
    ``dt`` is the spacing between stored fields."""
    fields = np.atleast_2d(np.asarray(fields, dtype=complex))
    count, n = fields.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qddq", n, float(L), float(dt), count))
        inter = np.empty((count, n, 2), dtype="<f8")
        inter[..., 0] = fields.real
        inter[..., 1] = fields.imag
        fh.write(inter.tobytes())


def read_fields(path):
    with open(path, "rb") as fh:
        n, L, dt, count = struct.unpack("<qddq", fh.read(32))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 2 * n * count:
        raise ValidationError(f"{path}: payload size does not match header")
    arr = data.reshape(count, n, 2)
    return arr[..., 0] + 1j * arr[..., 1], {"n": n, "L": L, "dt": dt, "count": count}


def save_trajectory(traj: Trajectory, directory, preamble: str | None = None, fields: bool = True):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = dict(traj.metadata)
    meta.update({"wavefront_time": traj.wavefront_time, "trustworthy_end": traj.trustworthy_end,
                 "truncated": traj.truncated, "snapshots": len(traj)})
    (d / "trajectory.json").write_text(json.dumps(_jsonable(meta), sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    zs = traj.z if traj.z.size else np.full(len(traj), np.nan + 0j)
    res = traj.decomposition_residual if traj.decomposition_residual.size else np.full(len(traj), np.nan)
    rows = [[t, z.real, z.imag, abs(z), m, e, r]
            for t, z, m, e, r in zip(traj.t, zs, traj.mass, traj.energy, res)]
    write_csv(d / "trajectory.csv", CSV_COLUMNS, rows, preamble)
    if fields:
        spacing = float(traj.t[1] - traj.t[0]) if len(traj) > 1 else 0.0
        write_fields(d / "fields.bin", traj.u, traj.metadata["grid"]["L"], spacing)


def load_trajectory(directory, branch: BoundStateBranch | None = None) -> Trajectory:
    d = Path(directory)
    for name in ("trajectory.json", "trajectory.csv", "fields.bin"):
        if not (d / name).exists():
            raise MissingInput(f"{d / name} not found")
    meta = json.loads((d / "trajectory.json").read_text(encoding="utf-8"))
    header, data = read_csv(d / "trajectory.csv")
    col = {h: data[:, i] for i, h in enumerate(header)}
    u, _ = read_fields(d / "fields.bin")
    z = col["re_z"] + 1j * col["im_z"]
    eta = None
    if branch is not None and np.all(np.isfinite(z)):
        eta = np.array([uu - branch(zz) for uu, zz in zip(u, z)])
    wf = meta.pop("wavefront_time")
    te = meta.pop("trustworthy_end")
    tr = meta.pop("truncated")
    meta.pop("snapshots", None)
    return Trajectory(col["t"], u, z, eta, col["mass"], col["energy"],
                      col["decomposition_residual"], meta, wf, te, tr)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj
