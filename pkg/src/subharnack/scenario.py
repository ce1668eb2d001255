"""Scenario files: loading, overrides, validation and object construction.

A scenario is a nested mapping written in YAML (JSON is accepted too, since
it is a YAML subset).  Every section and key is listed in :data:`DEFAULTS`;
unknown keys are configuration errors.  Values are validated by building the
downstream objects before any computation starts.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .cd import CDConstants
from .entropy import EntropyParams
from .geometry import Kind, ModelSpace
from .heat import Potential, PotentialBounds, gaussian_bump, potential_bounds
from .schedule import ExpFamily, PowerLaw, ScheduleSpec

__all__ = ["ConfigError", "Scenario", "DEFAULTS", "PRESETS", "load_scenario", "parse_override"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario: unknown key, bad type or out-of-range value."""


DEFAULTS: dict = {
    "version": SCHEMA_VERSION,
    "name": "scenario",
    "seed": 0,
    "space": {"kind": "heisenberg", "dims": None},
    "constants": {"rho1": 0.0, "rho2": 0.5, "k": 1.0, "d": 2.0},
    "potential": {"preset": "zero", "value": 0.0, "amplitude": 0.0, "file": None, "times": None},
    "initial": {
        "preset": "bump",
        "center": None,
        "width_cells": 8.0,
        "floor": 0.0,
        "amplitude": 0.5,
        "mode": [1, 0, 0],
        "file": None,
    },
    "schedule": {
        "family": "power",
        "gamma": 2.0,
        "beta": 2,
        "eps1": 0.5,
        "eps2": 0.5,
        "eta_form": "proof",
        "variant": "schrodinger",
        "t_grid": {"start": 0.01, "stop": 5.0, "num": 200},
    },
    "run": {"t_end": 2.0, "dt": 1e-3, "store_every": 100, "stencil": 2, "scheme": "cn", "t_range": [0.05, 2.0]},
    "cd": {"n_random": 64, "nu_points": 25, "z_independent": None, "max_freq": 2},
    "queries": {
        "harnack": {"random": 50, "min_gap": 0.05, "delta_factor": 1.1, "tuples": [], "stationary": False, "budget": 1.0},
        "entropy": {"varsigma_factors": [1.0, 4.0 / 3.0, 5.0 / 3.0], "tau": None, "gamma_variant": None, "t_range": [0.1, 2.0]},
    },
    "tolerances": {
        "cd_abs": 1e-6,
        "cd_disc_coef": 100.0,
        "liyau_coef": 10.0,
        "harnack_rel": 1e-6,
        "mono_rel": 1e-3,
        "mono_floor_coef": 10.0,
        "mass_drift": 1e-8,
        "schedule_rel": 1e-8,
        "lemma52_abs": 1e-3,
    },
    "output": {"directory": "out", "formats": ["csv", "json"], "trajectory": True},
}

# Free-form mappings whose keys are not checked.
_OPEN = {("schedule", "t_grid")}

PRESETS: dict = {
    "torus-single-mode": {
        "name": "torus-single-mode",
        "space": {"kind": "torus", "dims": [48, 48, 48]},
        "constants": {"rho1": 0.0, "rho2": 1.0, "k": 0.0, "d": 2.0},
        "initial": {"preset": "single_mode", "amplitude": 0.5, "mode": [1, 0, 0]},
        "cd": {"z_independent": True},
    },
    "nilmanifold-heat-kernel": {
        "name": "nilmanifold-heat-kernel",
        "space": {"kind": "heisenberg", "dims": [48, 48, 96]},
        "constants": {"rho1": 0.0, "rho2": 0.5, "k": 1.0, "d": 2.0},
        "initial": {"preset": "bump", "width_cells": 8.0},
    },
    "nilmanifold-constant-potential": {
        "name": "nilmanifold-constant-potential",
        "space": {"kind": "heisenberg", "dims": [48, 48, 96]},
        "constants": {"rho1": 0.0, "rho2": 0.5, "k": 1.0, "d": 2.0},
        "potential": {"preset": "constant", "value": 0.5},
        "initial": {"preset": "bump", "width_cells": 8.0},
    },
}


def _merge(base: dict, upd: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in upd.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown key '{'.'.join(here)}'")
        if isinstance(base[key], dict) and here not in _OPEN:
            if not isinstance(val, dict):
                raise ConfigError(f"'{'.'.join(here)}' must be a mapping")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> tuple[list, object]:
    """``a.b.c=value`` with the value read as YAML (so ``1e-3``, ``[1, 2]``, ``true`` work)."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override '{key}': cannot parse value ({exc})") from None
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    return key.split("."), value


def _nest(path: list, value) -> dict:
    out: dict = value
    for key in reversed(path):
        out = {key: out}
    return out


def load_raw(source=None, overrides=(), seed=None) -> dict:
    """Merge defaults, an optional preset or file, and ``--set`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if source is not None:
        src = str(source)
        if src in PRESETS:
            data = PRESETS[src]
        else:
            p = Path(src)
            if not p.is_file():
                raise ConfigError(f"scenario '{src}' is neither a file nor a preset ({', '.join(PRESETS)})")
            try:
                data = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {src}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{src}: the top level must be a mapping")
        cfg = _merge(cfg, data)
    for text in overrides:
        path, value = parse_override(text)
        cfg = _merge(cfg, _nest(path, value))
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _num(cfg, path, cast=float, positive=False, nonneg=False):
    node = cfg
    for key in path:
        node = node[key]
    name = ".".join(path)
    try:
        val = cast(node)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a number, got {node!r}") from None
    if cast is float and not math.isfinite(val):
        raise ConfigError(f"'{name}' must be finite")
    if positive and not val > 0:
        raise ConfigError(f"'{name}' must be positive")
    if nonneg and not val >= 0:
        raise ConfigError(f"'{name}' must be nonnegative")
    return val


@dataclass
class Scenario:
    """A validated scenario with the numerical objects it describes."""

    raw: dict
    space: ModelSpace
    constants: CDConstants
    potential: Potential
    vbounds: PotentialBounds
    u0: np.ndarray
    schedule: ScheduleSpec
    schedule_heat: ScheduleSpec | None
    entropy: list
    t_grid: np.ndarray

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def run(self) -> dict:
        return self.raw["run"]

    @property
    def tol(self) -> dict:
        return self.raw["tolerances"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["output"]["directory"])

    def resolved(self) -> dict:
        return json.loads(json.dumps(self.raw, default=str))


def _space(cfg) -> ModelSpace:
    s = cfg["space"]
    try:
        kind = Kind.parse(s["kind"])
    except ValueError as exc:
        raise ConfigError(f"'space.kind': {exc}") from None
    dims = s["dims"]
    if dims is None:
        dims = [48, 48, 96] if kind is Kind.HEISENBERG else [48, 48, 48]
    if not isinstance(dims, (list, tuple)) or len(dims) != 3:
        raise ConfigError("'space.dims' must be a list of three integers")
    try:
        dims = [int(v) for v in dims]
        return ModelSpace(kind, tuple(dims))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'space.dims': {exc}") from None


def _potential(cfg, space: ModelSpace) -> Potential:
    p = cfg["potential"]
    preset = p["preset"]
    x, y, z = space.mesh
    try:
        if preset == "zero":
            return Potential.zero(space)
        if preset == "constant":
            return Potential.constant(space, _num(cfg, ("potential", "value"), nonneg=True))
        if preset == "wave":
            c0 = _num(cfg, ("potential", "value"), nonneg=True)
            amp = _num(cfg, ("potential", "amplitude"), nonneg=True)
            field_ = c0 + amp * (1 + np.cos(2 * np.pi * x)) * np.ones(space.dims)
            return Potential.static(space, field_)
        if preset == "file":
            if not p["file"]:
                raise ConfigError("'potential.file' is required for the file preset")
            data = np.load(p["file"])
            if data.ndim == 3:
                return Potential.static(space, data)
            times = p["times"]
            if times is None:
                raise ConfigError("'potential.times' is required for a tabulated potential")
            return Potential(space, tuple(data), tuple(times))
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"'potential': {exc}") from None
    raise ConfigError(f"'potential.preset': unknown preset '{preset}' (zero, constant, wave, file)")


def _initial(cfg, space: ModelSpace) -> np.ndarray:
    p = cfg["initial"]
    preset = p["preset"]
    x, y, z = space.mesh
    if preset == "constant":
        return np.ones(space.dims)
    if preset == "single_mode":
        amp = _num(cfg, ("initial", "amplitude"))
        if not abs(amp) < 1:
            raise ConfigError("'initial.amplitude' must lie in (-1, 1) to keep the data positive")
        m = p["mode"]
        if not isinstance(m, (list, tuple)) or len(m) != 3:
            raise ConfigError("'initial.mode' must be three integers")
        m = [int(v) for v in m]
        if space.kind is Kind.HEISENBERG and m[0] != 0 and m[2] != 0:
            raise ConfigError("'initial.mode': x-dependent modes must be z-independent on the nilmanifold")
        phase = 2 * np.pi * (m[0] * x + m[1] * y + m[2] * z)
        return (1 + amp * np.sin(phase)) * np.ones(space.dims)
    if preset == "bump":
        c = p["center"]
        if c is None:
            c = [n // 2 for n in space.dims]
        if len(c) != 3:
            raise ConfigError("'initial.center' must be three cell indices")
        w = _num(cfg, ("initial", "width_cells"), positive=True)
        floor = _num(cfg, ("initial", "floor"), nonneg=True)
        if floor >= 1:
            raise ConfigError("'initial.floor' must be below 1")
        u = gaussian_bump(space, [int(v) % n for v, n in zip(c, space.dims)], w)
        return (1 - floor) * u + floor
    if preset == "file":
        if not p["file"]:
            raise ConfigError("'initial.file' is required for the file preset")
        try:
            return space.check(np.load(p["file"]))
        except (ValueError, OSError) as exc:
            raise ConfigError(f"'initial.file': {exc}") from None
    raise ConfigError(f"'initial.preset': unknown preset '{preset}' (constant, single_mode, bump, file)")


def _schedule(cfg, constants, vbounds) -> tuple[ScheduleSpec, ScheduleSpec | None]:
    s = cfg["schedule"]
    fam = s["family"]
    try:
        if fam == "power":
            family = PowerLaw(_num(cfg, ("schedule", "gamma")))
        elif fam == "exp":
            family = ExpFamily(_num(cfg, ("schedule", "gamma")), _num(cfg, ("schedule", "beta"), int))
        else:
            raise ConfigError(f"'schedule.family': unknown family '{fam}' (power, exp)")
        spec = ScheduleSpec(
            family, constants,
            eps1=_num(cfg, ("schedule", "eps1")), eps2=_num(cfg, ("schedule", "eps2")),
            vbounds=vbounds, eta_form=s["eta_form"], variant=s["variant"],
        )
        heat = None
        if vbounds == PotentialBounds.zero() or (vbounds.gamma1 == 0 and vbounds.gamma2 == 0 and vbounds.theta <= 0):
            heat = ScheduleSpec(family, constants, eps1=0.0, eps2=0.0, vbounds=PotentialBounds.zero(),
                                eta_form=s["eta_form"], variant="heat")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"'schedule': {exc}") from None
    return spec, heat


def _entropy(cfg, constants) -> list:
    e = cfg["queries"]["entropy"]
    if not constants.finite_dimension or constants.rho1 < 0:
        return []
    out = []
    try:
        for f in e["varsigma_factors"]:
            var = float(f) * constants.rho2
            if e["tau"] is None:
                p = EntropyParams.default(constants, var, e["gamma_variant"])
            else:
                p = EntropyParams(constants, float(e["tau"]), var, e["gamma_variant"])
            out.append(p)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'queries.entropy': {exc}") from None
    return out


def build(cfg: dict) -> Scenario:
    """Validate a merged configuration and construct its objects."""
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"'version': only schema version {SCHEMA_VERSION} is supported")
    _num(cfg, ("seed",), int, nonneg=True)
    space = _space(cfg)
    try:
        constants = CDConstants.from_dict(cfg["constants"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"'constants': {exc}") from None
    V = _potential(cfg, space)
    vb = potential_bounds(space, V)
    u0 = _initial(cfg, space)
    spec, heat = _schedule(cfg, constants, vb)
    run = cfg["run"]
    dt = _num(cfg, ("run", "dt"), positive=True)
    t_end = _num(cfg, ("run", "t_end"), positive=True)
    _num(cfg, ("run", "store_every"), int, positive=True)
    stencil = _num(cfg, ("run", "stencil"), int, nonneg=True)
    if stencil > 2:
        raise ConfigError("'run.stencil' must be 0, 1 or 2")
    if abs(round(t_end / dt) * dt - t_end) > 1e-9 * t_end:
        raise ConfigError("'run.t_end' must be an integer multiple of 'run.dt'")
    if run["scheme"] not in ("cn", "be"):
        raise ConfigError("'run.scheme' must be 'cn' or 'be'")
    tr = run["t_range"]
    if not isinstance(tr, (list, tuple)) or len(tr) != 2 or not 0 < float(tr[0]) < float(tr[1]):
        raise ConfigError("'run.t_range' must be [t_lo, t_hi] with 0 < t_lo < t_hi")
    g = cfg["schedule"]["t_grid"]
    try:
        t_grid = np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"'schedule.t_grid': {exc}") from None
    if t_grid[0] <= 0 or not np.all(np.diff(t_grid) > 0):
        raise ConfigError("'schedule.t_grid' must be increasing and positive")
    for key, val in cfg["tolerances"].items():
        _num(cfg, ("tolerances", key), nonneg=True)
    h = cfg["queries"]["harnack"]
    _num(cfg, ("queries", "harnack", "random"), int, nonneg=True)
    if not float(h["delta_factor"]) > 1:
        raise ConfigError("'queries.harnack.delta_factor' must exceed 1")
    for n, q in enumerate(h["tuples"]):
        if not isinstance(q, dict) or set(q) != {"x", "y", "t1", "t2"}:
            raise ConfigError(f"'queries.harnack.tuples[{n}]' must have keys x, y, t1, t2")
    ent = _entropy(cfg, constants)
    fmts = cfg["output"]["formats"]
    if not set(fmts) <= {"csv", "json"}:
        raise ConfigError("'output.formats' may contain csv and json only")
    return Scenario(cfg, space, constants, V, vb, u0, spec, heat, ent, t_grid)


def load_scenario(source=None, overrides=(), seed=None, out=None) -> Scenario:
    cfg = load_raw(source, overrides, seed)
    if out is not None:
        cfg["output"]["directory"] = str(out)
    return build(cfg)
