"""Run configuration: two-level JSON with defaults, overrides and a content hash."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from . import __version__
from .errors import MissingInput, ValidationError

DEFAULTS: dict = {
    "seed": 0,
    "potential": {"kind": "scaled_sech2", "depth": 1.0, "width": 1.0, "file": None},
    "nonlinearity": {"p": 2.0, "sigma": -1.0},
    "grid": {"L": 40.0, "n": 4096, "boundary": "dirichlet", "stencil": "fd2"},
    "weights": {"A": 64.0, "B": 4.0, "kappa": 0.3, "a": 0.2, "s": 2.0, "tau": 0.6},
    "evolution": {
        "dt": 1e-3,
        "T_final": 200.0,
        "snapshot_stride": 100,
        "scheme": "strang_split",
        "linear": "chebyshev",
        "sponge_enabled": True,
        "sponge_start_fraction": 0.75,
        "sponge_strength": 1.0,
        "write_fields": True,
    },
    "initial": {"kind": "theorem", "z0": 0.01, "packet_amplitude": 0.005, "x0": 0.0,
                "width": 1.0, "k0": 1.0},
    "branch": {"z_max": 0.2, "tol": 1e-10, "r_min": 1e-3, "r_max": 0.1, "count": 9},
    "scattering": {"ks": [0.25, 0.5, 1.0, 2.0, 4.0], "threshold": 1e-3, "probe": 0.01},
    "smoothing": {"fields": 50, "L": 80.0, "n": 1024, "stencil": "fd4", "start_fraction": 0.5,
                  "strength": 1.0, "T": 200.0},
    "diagnostics": {"B_sweep": [3.0, 4.0, 6.0], "radius": 5.0, "c0": 0.2},
}

INITIAL_KINDS = ("theorem", "stationary", "zero", "packet", "random")


def _merge(base: dict, upd: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        path = f"{where}.{k}" if where else k
        if k not in base:
            raise ValidationError(f"unknown config key {path!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ValidationError(f"config key {path!r} must be a table")
            out[k] = _merge(base[k], v, path)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one ``section.key=value`` (or ``key=value``) override."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) > 2:
        raise ValidationError(f"override key {key!r} nests deeper than two levels")
    upd: dict = {parts[-1]: _parse_value(value)}
    if len(parts) == 2:
        upd = {parts[0]: upd}
    return _merge(cfg, upd)


def _check_types(cfg: dict):
    for sec, table in DEFAULTS.items():
        if not isinstance(table, dict):
            continue
        for k, dv in table.items():
            v = cfg[sec][k]
            if dv is None or v is None:
                continue
            if isinstance(dv, bool) and not isinstance(v, bool):
                raise ValidationError(f"{sec}.{k} must be a boolean")
            if isinstance(dv, (int, float)) and not isinstance(dv, bool):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ValidationError(f"{sec}.{k} must be numeric")
            if isinstance(dv, str) and not isinstance(v, str):
                raise ValidationError(f"{sec}.{k} must be a string")
            if isinstance(dv, list) and not isinstance(v, list):
                raise ValidationError(f"{sec}.{k} must be a list")
    if cfg["initial"]["kind"] not in INITIAL_KINDS:
        raise ValidationError(f"initial.kind must be one of {INITIAL_KINDS}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or not 0 <= cfg["seed"] < 2 ** 64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    for k in ("n", "snapshot_stride", "count", "fields"):
        for sec in ("grid", "evolution", "branch", "smoothing"):
            if k in cfg[sec] and int(cfg[sec][k]) != cfg[sec][k]:
                raise ValidationError(f"{sec}.{k} must be an integer")


def resolve(user: dict | None = None, overrides=(), seed: int | None = None) -> dict:
    """Defaults + user file + overrides (+ seed), validated."""
    cfg = _merge(DEFAULTS, user or {})
    for item in overrides:
        cfg = apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    _check_types(cfg)
    return cfg


def load(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"config file {p} not found")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{p}: top level must be a table")
    return data


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def preamble(cfg: dict) -> str:
    return f"nlstrap {__version__} config_sha256={config_hash(cfg)}"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
