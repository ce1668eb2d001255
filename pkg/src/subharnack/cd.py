"""Empirical checks of the generalized curvature-dimension inequality.

For a field ``f`` and ``nu > 0`` the margin is the cellwise quantity

    Gamma_2(f) + nu Gamma_2^Z(f) - (Lf)^2 / d - (rho1 - k/nu) Gamma(f) - rho2 Gamma^Z(f)

and a tuple of constants passes when the margin is nonnegative, up to the
discretization tolerance, for every field of a corpus and every ``nu`` of a
grid.  Sampling can only refute a tuple; a pass is evidence, not a proof.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    Kind,
    ModelSpace,
    apply_L,
    band_limited_field,
    gamma,
    gamma2,
    gamma2_Z,
    gamma_Z,
    theta_mode,
)

__all__ = ["CDConstants", "CDReport", "FieldTerms", "verify_cd", "default_corpus", "default_nu_grid", "cd_terms"]


def default_nu_grid(n: int = 25) -> np.ndarray:
    return np.logspace(-2, 2, n)


@dataclass(frozen=True)
class CDConstants:
    """Constants ``(rho1, rho2, k, d)``; ``d = math.inf`` is allowed."""

    rho1: float
    rho2: float
    k: float
    d: float

    def __post_init__(self):
        for name in ("rho1", "rho2", "k", "d"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not math.isfinite(self.rho1):
            raise ValueError("rho1 must be finite")
        if not self.rho2 > 0 or not math.isfinite(self.rho2):
            raise ValueError("rho2 must be positive")
        if not self.k >= 0 or not math.isfinite(self.k):
            raise ValueError("k must be nonnegative")
        if not self.d >= 2:
            raise ValueError("d must be at least 2")

    @property
    def finite_dimension(self) -> bool:
        return math.isfinite(self.d)

    def as_dict(self) -> dict:
        return {"rho1": self.rho1, "rho2": self.rho2, "k": self.k, "d": "inf" if math.isinf(self.d) else self.d}

    @classmethod
    def from_dict(cls, data: dict) -> "CDConstants":
        d = data.get("d", 2.0)
        d = math.inf if str(d).lower() in ("inf", "infinity") else float(d)
        return cls(data["rho1"], data["rho2"], data["k"], d)


@dataclass
class FieldTerms:
    """The five cellwise forms entering the margin of one field."""

    gamma2: np.ndarray
    gamma2_z: np.ndarray
    lf_sq: np.ndarray
    gamma: np.ndarray
    gamma_z: np.ndarray
    scale: float

    def margin(self, c: CDConstants, nu: float) -> np.ndarray:
        inv_d = 0.0 if math.isinf(c.d) else 1.0 / c.d
        return (
            self.gamma2
            + nu * self.gamma2_z
            - inv_d * self.lf_sq
            - (c.rho1 - c.k / nu) * self.gamma
            - c.rho2 * self.gamma_z
        )

    def inf_over_nu(self, c: CDConstants) -> np.ndarray:
        """Cellwise infimum of the margin over all ``nu > 0``."""
        inv_d = 0.0 if math.isinf(c.d) else 1.0 / c.d
        base = self.gamma2 - inv_d * self.lf_sq - c.rho1 * self.gamma - c.rho2 * self.gamma_z
        kg = c.k * self.gamma
        b = self.gamma2_z
        out = base + 2.0 * np.sqrt(np.clip(kg, 0, None) * np.clip(b, 0, None))
        return np.where(b < 0, -np.inf, out)


def cd_terms(space: ModelSpace, f) -> FieldTerms:
    f = space.check(f)
    lf = apply_L(space, f)
    return FieldTerms(
        gamma2=gamma2(space, f, check_resolution=False),
        gamma2_z=gamma2_Z(space, f, check_resolution=False),
        lf_sq=lf * lf,
        gamma=gamma(space, f),
        gamma_z=gamma_Z(space, f),
        scale=float(np.max(np.abs(f - f.mean()))),
    )


@dataclass
class CDReport:
    constants: CDConstants
    tested_fields: int
    nu_grid: list
    worst_margin: float
    worst_witness: tuple
    worst_excess: float
    excess_witness: tuple
    inf_nu_margin: float
    seed: int | None
    passed: bool
    abs_tol: float
    disc_coef: float
    field_ids: list = field(default_factory=list)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["constants"] = self.constants.as_dict()
        out["worst_witness"] = list(self.worst_witness)
        out["excess_witness"] = list(self.excess_witness)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), default=_jsonable, **kw)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


ABS_TOL = 1e-6
DISC_COEF = 100.0


def verify_cd(
    space: ModelSpace,
    constants: CDConstants,
    fields,
    nu_grid=None,
    *,
    abs_tol: float = ABS_TOL,
    disc_coef: float = DISC_COEF,
    seed: int | None = None,
    field_ids=None,
    terms=None,
) -> CDReport:
    """Sample the inequality on ``fields`` for every ``nu`` of ``nu_grid``.

    A sample passes when ``margin >= -(abs_tol * s^2 + disc_coef * h^2 * T)``
    where ``s`` is the field amplitude, ``h`` the coarsest grid step and
    ``T = max|Gamma_2(f)| + nu max|Gamma_2^Z(f)|`` the size of the iterated
    forms of that field.  ``T`` does not involve the constants, so weakening
    the constants can never turn a pass into a failure.  ``terms`` may carry precomputed
    :class:`FieldTerms` to share work between several constant tuples.
    """
    nu_grid = default_nu_grid() if nu_grid is None else np.asarray(nu_grid, dtype=float)
    if nu_grid.ndim != 1 or nu_grid.size == 0 or np.any(nu_grid <= 0):
        raise ValueError("nu_grid must be a nonempty list of positive numbers")
    if terms is None:
        terms = [cd_terms(space, f) for f in fields]
    ids = list(field_ids) if field_ids is not None else [f"field{n}" for n in range(len(terms))]
    h2 = max(space.spacing) ** 2
    worst = (np.inf, None)
    excess = (np.inf, None)
    inf_nu = np.inf
    for fid, ft in zip(ids, terms):
        floor = abs_tol * ft.scale**2
        g2_max = float(np.max(np.abs(ft.gamma2)))
        g2z_max = float(np.max(np.abs(ft.gamma2_z)))
        for nu in nu_grid:
            m = ft.margin(constants, nu)
            tol = floor + disc_coef * h2 * (g2_max + nu * g2z_max)
            n = int(np.argmin(m))
            if m.flat[n] < worst[0]:
                worst = (float(m.flat[n]), (fid, float(nu), np.unravel_index(n, m.shape)))
            e = m + tol
            n = int(np.argmin(e))
            if e.flat[n] < excess[0]:
                excess = (float(e.flat[n]), (fid, float(nu), np.unravel_index(n, m.shape)))
        inf_nu = min(inf_nu, float(np.min(ft.inf_over_nu(constants))))
    witness = tuple([worst[1][0], worst[1][1], [int(i) for i in worst[1][2]]]) if worst[1] else ()
    ewitness = tuple([excess[1][0], excess[1][1], [int(i) for i in excess[1][2]]]) if excess[1] else ()
    return CDReport(
        constants=constants,
        tested_fields=len(terms),
        nu_grid=[float(v) for v in nu_grid],
        worst_margin=worst[0] if worst[1] else 0.0,
        worst_witness=witness,
        worst_excess=excess[0] if excess[1] else 0.0,
        excess_witness=ewitness,
        inf_nu_margin=inf_nu if terms else 0.0,
        seed=seed,
        passed=bool(not excess[1] or excess[0] >= 0),
        abs_tol=abs_tol,
        disc_coef=disc_coef,
        field_ids=ids,
    )


def deterministic_fields(space: ModelSpace, z_independent: bool = False) -> dict:
    """Coordinate waves and their products, plus smooth ``z`` modes."""
    x, y, z = space.mesh
    tau = 2 * np.pi
    out = {
        "sin_x": np.sin(tau * x),
        "cos_y": np.cos(tau * y),
        "sin_x_plus_y": np.sin(tau * (x + y)),
        "sin_x_cos_y": np.sin(tau * x) * np.cos(tau * y),
        "cos_2x_sin_y": np.cos(2 * tau * x) * np.sin(tau * y),
    }
    if not z_independent:
        if space.kind is Kind.TORUS:
            out["sin_z"] = np.sin(tau * z)
            out["sin_x_cos_z"] = np.sin(tau * x) * np.cos(tau * z)
            out["cos_y_plus_z"] = np.cos(tau * (y + z))
        else:
            out["theta_1_0"] = theta_mode(space, 1, 0, 0.5, 0.2)
            out["theta_1_1"] = theta_mode(space, 1, 1, 0.3, 0.22, 0.7)
            out["theta_plus_wave"] = theta_mode(space, 1, 0, 0.6, 0.2) + np.sin(tau * y)
    for key, v in out.items():
        out[key] = np.ascontiguousarray(np.broadcast_to(v, space.dims), dtype=float)
    return out


def default_corpus(
    space: ModelSpace, n_random: int = 64, seed: int = 0, z_independent: bool = False, max_freq: int = 2
) -> tuple[list, list]:
    """Deterministic fields plus ``n_random`` seeded band-limited fields.

    Returns ``(ids, fields)``.
    """
    det = deterministic_fields(space, z_independent)
    rng = np.random.default_rng(seed)
    ids = list(det)
    fields = list(det.values())
    for n in range(n_random):
        ids.append(f"random{n}")
        fields.append(band_limited_field(space, rng, max_freq=max_freq, z_independent=z_independent))
    return ids, fields
