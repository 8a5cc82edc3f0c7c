"""Run configuration: TOML loading, defaults, validation with key paths, and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "output_dir": "vnls_run",
    "nonlinearity": {"kind": "cubic_quintic", "gamma": 0.12},
    "soliton": {"omega0": 1.0, "family_halfwidth": 0.05, "n_cheb": 8},
    "grid": {"n": 48, "box_length": 8 * np.pi},
    "radial": {"r_max": 25.0, "n_points": 1000, "ell_max": 6},
    "family_scan": {"omega_min": 0.1, "omega_max": 1.4, "n_samples": 14},
    "evolution": {
        "dt": 0.02, "t_final": 50.0, "output_every": 50, "snapshot_every": 5,
        "checkpoint_every": 0, "sponge_strength": 0.0, "sponge_width": 3.0,
    },
    "perturbation": {"kicks": [], "radiation_amplitude": 0.0, "radiation_width": 2.0},
    "fgr": {"n_theta": 16, "kappa_tol": 5e-3, "delta_rel": 1e-6},
}

_SCHEMA = {
    "seed": int,
    "output_dir": str,
    "nonlinearity.kind": str,
    "soliton.omega0": float,
    "soliton.family_halfwidth": float,
    "soliton.n_cheb": int,
    "grid.n": int,
    "grid.box_length": float,
    "radial.r_max": float,
    "radial.n_points": int,
    "radial.ell_max": int,
    "family_scan.omega_min": float,
    "family_scan.omega_max": float,
    "family_scan.n_samples": int,
    "evolution.dt": float,
    "evolution.t_final": float,
    "evolution.output_every": int,
    "evolution.snapshot_every": int,
    "evolution.checkpoint_every": int,
    "evolution.sponge_strength": float,
    "evolution.sponge_width": float,
    "perturbation.kicks": list,
    "perturbation.radiation_amplitude": float,
    "perturbation.radiation_width": float,
    "fgr.n_theta": int,
    "fgr.kappa_tol": float,
    "fgr.delta_rel": float,
}

_POSITIVE = {
    "soliton.omega0", "soliton.family_halfwidth", "grid.box_length", "radial.r_max", "evolution.dt",
    "evolution.t_final", "family_scan.omega_min", "family_scan.omega_max", "fgr.kappa_tol", "fgr.delta_rel",
    "perturbation.radiation_width", "evolution.sponge_width",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _get(cfg: dict, path: str):
    cur = cfg
    for part in path.split("."):
        cur = cur[part]
    return cur


def _unknown_keys(cfg: dict, ref: dict, prefix: str = "") -> list:
    bad = []
    for k, v in cfg.items():
        key = f"{prefix}{k}"
        if k not in ref:
            if prefix.startswith("nonlinearity"):
                continue
            bad.append(key)
        elif isinstance(v, dict) and isinstance(ref[k], dict):
            bad += _unknown_keys(v, ref[k], key + ".")
    return bad


def validate(cfg: dict) -> dict:
    """Check types and ranges; raise :class:`ConfigError` naming the offending key."""
    bad = _unknown_keys(cfg, DEFAULTS)
    if bad:
        raise ConfigError(f"{bad[0]}: unknown key")
    for path, typ in _SCHEMA.items():
        try:
            val = _get(cfg, path)
        except (KeyError, TypeError):
            raise ConfigError(f"{path}: missing") from None
        if typ is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {val!r}")
            if not np.isfinite(val):
                raise ConfigError(f"{path}: must be finite")
        elif typ is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{path}: expected an integer, got {val!r}")
        elif not isinstance(val, typ):
            raise ConfigError(f"{path}: expected {typ.__name__}, got {val!r}")
        if path in _POSITIVE and not val > 0:
            raise ConfigError(f"{path}: must be > 0, got {val!r}")
    nl = cfg["nonlinearity"]
    kind = nl["kind"]
    if kind == "cubic_quintic":
        g = nl.get("gamma")
        if isinstance(g, bool) or not isinstance(g, (int, float)) or not g > 0:
            raise ConfigError(f"nonlinearity.gamma: must be > 0, got {g!r}")
    elif kind == "polynomial":
        c = nl.get("coeffs")
        if not isinstance(c, list) or not c or c[0] != 0:
            raise ConfigError("nonlinearity.coeffs: list with coeffs[0] == 0 required")
    elif kind == "expression":
        if not isinstance(nl.get("expr"), str):
            raise ConfigError("nonlinearity.expr: string expression in s required")
    elif kind != "cubic":
        raise ConfigError(f"nonlinearity.kind: unknown kind {kind!r}")
    if cfg["family_scan"]["omega_min"] >= cfg["family_scan"]["omega_max"]:
        raise ConfigError("family_scan.omega_max: must exceed omega_min")
    if cfg["family_scan"]["n_samples"] < 3:
        raise ConfigError("family_scan.n_samples: at least 3 required")
    if cfg["soliton"]["family_halfwidth"] >= 1:
        raise ConfigError("soliton.family_halfwidth: relative half-width must be < 1")
    if cfg["soliton"]["n_cheb"] < 4:
        raise ConfigError("soliton.n_cheb: at least 4 nodes required")
    n = cfg["grid"]["n"]
    if n < 8 or n % 2:
        raise ConfigError(f"grid.n: even integer >= 8 required, got {n}")
    m = n
    for p in (2, 3, 5):
        while m % p == 0:
            m //= p
    if m != 1:
        raise ConfigError(f"grid.n: prime factors must be 2, 3, 5, got {n}")
    if cfg["radial"]["n_points"] < 50:
        raise ConfigError("radial.n_points: at least 50 required")
    for i, k in enumerate(cfg["perturbation"]["kicks"]):
        if not isinstance(k, dict) or "mode" not in k:
            raise ConfigError(f"perturbation.kicks[{i}]: table with 'mode', 're', 'im' required")
        if not isinstance(k["mode"], int) or k["mode"] < 0:
            raise ConfigError(f"perturbation.kicks[{i}].mode: nonnegative integer required")
        for part in ("re", "im"):
            v = k.get(part, 0.0)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"perturbation.kicks[{i}].{part}: number required")
    for key in ("output_every", "snapshot_every"):
        if cfg["evolution"][key] < 1:
            raise ConfigError(f"evolution.{key}: must be >= 1")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate(_merge(DEFAULTS, raw))


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON of the configuration, ignoring ``output_dir``."""
    data = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(data, sort_keys=True, default=float).encode()).hexdigest()
