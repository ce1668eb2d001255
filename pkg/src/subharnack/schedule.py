"""Parameter schedules for the differential Harnack inequality and its evaluation.

Given a weight ``a(t)`` with ``a(0) = 0`` the schedule consists of

    b(t)     = 2 (1 - eps2) rho2 A(t) / a(t),            A(t) = int_0^t a
    eta(t)   = d/4 ((1 + eps1) a'/a + c k a / (rho2 A) - 2 rho1)
    alpha(t) = 4 / (d a) int_0^t a eta
    phi(t)   = 1 / a int_0^t a (g1^2 a |alpha - 1|^2 / (eps1 a') + b^2 g2^2 / (2 eps2 rho2)
                                + theta alpha + 2 eta^2 / d)

where ``c = 1`` in the ``"statement"`` form of ``eta`` and ``c = 1/(1 - eps2)``
in the ``"proof"`` form (the latter makes the maximum-principle argument close;
the two agree when ``eps2 = 0``).  The ``"heat"`` variant has
``eps1 = eps2 = 0`` and requires a vanishing potential.

Quadrature is done by integrating the normalized cumulative integrals

    B = A / (t a),   P = int_0^t a eta / a,   Q = t int_0^t a G / a

as an ODE in ``s = log t`` with a tight-tolerance Runge-Kutta method; near
``t = 0`` the integrals are started from their power-law tails.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .cd import CDConstants
from .geometry import ModelSpace, apply_L, gamma, gamma_Z
from .heat import Potential, PotentialBounds, Trajectory

__all__ = [
    "PowerLaw",
    "ExpFamily",
    "Custom",
    "ScheduleSpec",
    "LiYauSchedule",
    "ScheduleError",
    "build_schedule",
    "closed_form_schedule",
    "ClosedForm",
    "harnack_margin",
    "lemma31_margin",
    "MarginSeries",
    "elliptic_bound",
    "laurent_coefficients",
]


class ScheduleError(ValueError):
    """The weight or the parameters do not define an admissible schedule."""


# -- weight families ---------------------------------------------------------


@dataclass(frozen=True)
class PowerLaw:
    """``a(t) = t^gamma`` with ``gamma > 1``."""

    gamma: float = 2.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ScheduleError("the power-law exponent must exceed 1")

    def a(self, t, constants=None):
        return np.power(t, self.gamma)

    def da(self, t, constants=None):
        return self.gamma * np.power(t, self.gamma - 1)

    def log_derivative(self, t, constants=None):
        return self.gamma / np.asarray(t, dtype=float)

    def as_dict(self):
        return {"family": "power", "gamma": self.gamma}


@dataclass(frozen=True)
class ExpFamily:
    """``a(t) = e^{r t} (1 - e^{r t})^beta`` with ``r = gamma rho1``.

    ``beta`` must be an even integer larger than one so that ``a >= 0`` for
    either sign of ``rho1``.
    """

    gamma: float
    beta: int = 2

    def __post_init__(self):
        if float(self.beta) != int(self.beta) or int(self.beta) % 2 or self.beta < 2:
            raise ScheduleError("beta must be an even integer >= 2")
        if self.gamma == 0:
            raise ScheduleError("gamma must be nonzero")

    def rate(self, constants: CDConstants) -> float:
        r = self.gamma * constants.rho1
        if r == 0:
            raise ScheduleError("the exponential family needs gamma * rho1 != 0")
        return r

    def a(self, t, constants):
        r = self.rate(constants)
        w = np.expm1(r * np.asarray(t, dtype=float))
        return (1 + w) * w**self.beta

    def da(self, t, constants):
        return self.a(t, constants) * self.log_derivative(t, constants)

    def log_derivative(self, t, constants):
        r = self.rate(constants)
        w = np.expm1(r * np.asarray(t, dtype=float))
        return r * (self.beta + (self.beta + 1) * w) / w

    def as_dict(self):
        return {"family": "exp", "gamma": self.gamma, "beta": int(self.beta)}


@dataclass(frozen=True)
class Custom:
    """A user-supplied weight, as callables or as tables on a time grid.

    Tables are interpolated monotonically in log-log coordinates, so both
    ``a`` and ``a'`` must be tabulated positive.  Integrability near zero is
    the caller's responsibility and is checked by refinement.
    """

    a_fn: Callable | None = None
    da_fn: Callable | None = None
    table: tuple | None = None

    def __post_init__(self):
        if self.table is not None:
            t, a, da = (np.asarray(v, dtype=float) for v in self.table)
            if np.any(t <= 0) or np.any(np.diff(t) <= 0):
                raise ScheduleError("custom weight table needs increasing positive times")
            if np.any(a <= 0) or np.any(da <= 0):
                raise ScheduleError("custom weight table needs positive a and a'")
            la = PchipInterpolator(np.log(t), np.log(a), extrapolate=True)
            lda = PchipInterpolator(np.log(t), np.log(da), extrapolate=True)
            object.__setattr__(self, "a_fn", lambda s: np.exp(la(np.log(s))))
            object.__setattr__(self, "da_fn", lambda s: np.exp(lda(np.log(s))))
        elif self.a_fn is None or self.da_fn is None:
            raise ScheduleError("a custom weight needs a and a' (callables or a table)")

    def a(self, t, constants=None):
        return np.asarray(self.a_fn(np.asarray(t, dtype=float)), dtype=float)

    def da(self, t, constants=None):
        return np.asarray(self.da_fn(np.asarray(t, dtype=float)), dtype=float)

    def log_derivative(self, t, constants=None):
        return self.da(t) / self.a(t)

    def as_dict(self):
        return {"family": "custom"}


# -- specification ---------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSpec:
    family: object
    constants: CDConstants
    eps1: float = 0.5
    eps2: float = 0.5
    vbounds: PotentialBounds = field(default_factory=PotentialBounds.zero)
    eta_form: str = "proof"
    variant: str = "schrodinger"

    def __post_init__(self):
        if self.variant not in ("schrodinger", "heat"):
            raise ScheduleError("variant must be 'schrodinger' or 'heat'")
        if self.eta_form not in ("proof", "statement"):
            raise ScheduleError("eta_form must be 'proof' or 'statement'")
        if not self.constants.finite_dimension:
            raise ScheduleError("schedules need a finite dimension constant d")
        if self.variant == "heat":
            if self.eps1 != 0 or self.eps2 != 0:
                raise ScheduleError("the heat variant has eps1 = eps2 = 0")
            vb = self.vbounds
            if vb.gamma1 or vb.gamma2 or vb.theta > 0:
                raise ScheduleError("the heat variant needs a vanishing potential")
        else:
            for name in ("eps1", "eps2"):
                v = getattr(self, name)
                if not 0 < v < 1:
                    raise ScheduleError(f"{name} must lie in (0,1)")

    @property
    def k_factor(self) -> float:
        """Multiplier of ``k a / (rho2 A)`` inside ``eta``."""
        return 1.0 / (1.0 - self.eps2) if self.eta_form == "proof" else 1.0

    def as_dict(self) -> dict:
        return {
            **self.family.as_dict(),
            "eps1": self.eps1,
            "eps2": self.eps2,
            "eta_form": self.eta_form,
            "variant": self.variant,
            "constants": self.constants.as_dict(),
            "vbounds": self.vbounds.as_dict(),
        }


# -- quadrature ------------------------------------------------------------------


class _Rhs:
    """Right-hand side of the normalized integral system in ``s = log t``."""

    def __init__(self, spec: ScheduleSpec):
        self.spec = spec
        c = spec.constants
        self.c = c
        self.d = c.d

    def parts(self, t, B, P):
        spec, c = self.spec, self.c
        lg = spec.family.log_derivative(t, c)
        b = 2 * (1 - spec.eps2) * c.rho2 * t * B
        eta = self.d / 4 * ((1 + spec.eps1) * lg + spec.k_factor * c.k / (c.rho2 * t * B) - 2 * c.rho1)
        alpha = 4 * P / self.d
        return lg, b, eta, alpha

    def source(self, t, b, eta, alpha, lg):
        """The integrand ``G`` of ``phi``."""
        spec = self.spec
        vb = spec.vbounds
        g = self.theta_alpha(alpha) + 2 * eta**2 / self.d
        if vb.gamma1:
            g = g + vb.gamma1**2 * (alpha - 1) ** 2 / (spec.eps1 * lg)
        if vb.gamma2:
            g = g + b**2 * vb.gamma2**2 / (2 * spec.eps2 * spec.constants.rho2)
        return g

    def theta_alpha(self, alpha):
        return self.spec.vbounds.theta * alpha

    def __call__(self, s, y):
        t = math.exp(s)
        B, P, Q = y
        lg, b, eta, alpha = self.parts(t, B, P)
        tl = t * lg
        g = self.source(t, b, eta, alpha, lg)
        return [1 - B * (1 + tl), t * eta - P * tl, Q * (1 - tl) + t * t * g]


def _power_tail(f_hi, f_lo):
    """Exponent of ``c t^p`` through ``(t, f_hi)`` and ``(t/2, f_lo)``."""
    if f_hi == 0 or f_lo == 0 or np.sign(f_hi) != np.sign(f_lo):
        return None
    return math.log2(f_hi / f_lo)


def _tail_state(rhs: _Rhs, t0: float) -> np.ndarray:
    """Initial ``(B, P, Q)`` at ``t0`` from power-law fits of the integrands."""
    spec, c = rhs.spec, rhs.c
    fam = spec.family
    pts = np.array([t0 / 2, t0])
    a = fam.a(pts, c)
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ScheduleError("a(t) must be positive near t = 0")
    p = _power_tail(a[1], a[0])
    if p is None or p <= -1:
        raise ScheduleError("a(t) is not integrable at t = 0")
    B = np.full(2, 1.0 / (p + 1))
    out = []
    lg, b, eta, alpha = rhs.parts(pts, B, np.zeros(2))
    aeta = a * eta
    p = _power_tail(aeta[1], aeta[0])
    if p is None:
        P = np.zeros(2)
    else:
        if p <= -1:
            raise ScheduleError("a eta is not integrable at t = 0")
        P = pts * eta / (p + 1)
    lg, b, eta, alpha = rhs.parts(pts, B, P)
    ag = a * rhs.source(pts, b, eta, alpha, lg)
    p = _power_tail(ag[1], ag[0])
    if p is None:
        Q = 0.0
    else:
        if p <= -1:
            raise ScheduleError("the phi integrand is not integrable at t = 0")
        Q = pts[1] * pts[1] * ag[1] / (a[1] * (p + 1))
    out = [B[1], P[1], Q]
    return np.array(out)


def _admissibility(spec: ScheduleSpec, t: np.ndarray) -> list:
    fam, c = spec.family, spec.constants
    problems = []
    with np.errstate(all="ignore"):
        a = fam.a(t, c)
        lg = fam.log_derivative(t, c)
    bad = ~(np.isfinite(a) & (a > 0))
    if np.any(bad):
        problems.append(f"a(t) is not positive at t={t[np.argmax(bad)]:.6g}")
    bad = ~(np.isfinite(lg) & (lg > 0))
    if np.any(bad):
        problems.append(f"a'/a is not positive at t={t[np.argmax(bad)]:.6g}")
    return problems


@dataclass
class LiYauSchedule:
    """Tabulated schedule with dense evaluation on ``[t_min, t_max]``."""

    spec: ScheduleSpec
    t_grid: np.ndarray
    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    t_min: float
    t_max: float
    _dense: object = field(repr=False, default=None)

    def state(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t_min * (1 - 1e-12)) or np.any(t > self.t_max * (1 + 1e-12)):
            raise ValueError(f"schedule covers [{self.t_min:.3g}, {self.t_max:.3g}] only")
        y = self._dense(np.log(t))
        return t, y

    def evaluate(self, t) -> dict:
        """``a, a'/a, b, eta, alpha, phi`` at arbitrary times in range."""
        t, (B, P, Q) = self.state(t)
        rhs = _Rhs(self.spec)
        lg, b, eta, alpha = rhs.parts(t, B, P)
        return {
            "t": t,
            "a": self.spec.family.a(t, self.spec.constants),
            "log_da": lg,
            "b": b,
            "eta": eta,
            "alpha": alpha,
            "phi": Q / t,
        }

    def __call__(self, t):
        """``(b, alpha, phi)`` at ``t``; scalars in, scalars out."""
        ev = self.evaluate(t)
        if np.ndim(t) == 0:
            return float(ev["b"][0]), float(ev["alpha"][0]), float(ev["phi"][0])
        return ev["b"], ev["alpha"], ev["phi"]

    def rows(self):
        for row in zip(self.t_grid, self.a, self.b, self.eta, self.alpha, self.phi):
            yield dict(zip(("t", "a", "b", "eta", "alpha", "phi"), (float(v) for v in row)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["t", "a", "b", "eta", "alpha", "phi"])
            w.writeheader()
            for row in self.rows():
                w.writerow(row)


def build_schedule(
    spec: ScheduleSpec,
    t_grid,
    t_min: float = 1e-6,
    rtol: float = 1e-12,
    check_refinement: bool | None = None,
) -> LiYauSchedule:
    """Quadrature-built schedule on ``t_grid`` (increasing, positive).

    Admissibility (``a > 0`` and ``a'/a > 0``) is checked on the grid and on
    ``[t_min, t_grid[0]]``; violations raise :class:`ScheduleError` naming
    the first offending time.  For custom weights (or when asked) the start
    time is refined tenfold and a change above ``1e-6`` relative is reported
    as a non-integrable weight.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ScheduleError("t_grid must be increasing and positive")
    t_min = min(t_min, t_grid[0])
    probe = np.concatenate([np.geomspace(t_min, t_grid[0], 16), t_grid])
    problems = _admissibility(spec, probe)
    if problems:
        raise ScheduleError("; ".join(problems))
    dense = _integrate(spec, t_min, t_grid[-1], rtol)
    if check_refinement is None:
        check_refinement = isinstance(spec.family, Custom)
    if check_refinement:
        finer = _integrate(spec, t_min / 10, t_grid[-1], rtol)
        y0 = dense(math.log(t_grid[0]))
        y1 = finer(math.log(t_grid[0]))
        if np.any(np.abs(y1 - y0) > 1e-6 * np.maximum(np.abs(y1), 1e-300)):
            raise ScheduleError("schedule integrals do not converge as t_min -> 0 (non-integrable weight?)")
    sched = LiYauSchedule(spec, t_grid, *([None] * 5), t_min=t_min, t_max=float(t_grid[-1]), _dense=dense)
    ev = sched.evaluate(t_grid)
    for name in ("a", "b", "eta", "alpha", "phi"):
        setattr(sched, name, ev[name])
    if not np.all(sched.b > 0) or not np.all(np.isfinite(sched.alpha)):
        raise ScheduleError("schedule has non-positive b or non-finite alpha")
    return sched


def _integrate(spec: ScheduleSpec, t_min: float, t_max: float, rtol: float):
    rhs = _Rhs(spec)
    y0 = _tail_state(rhs, t_min)
    s_end = math.log(t_max) if t_max > t_min else math.log(t_min) + 1e-9
    sol = solve_ivp(rhs, (math.log(t_min), s_end), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-3, dense_output=True)
    if not sol.success:
        raise ScheduleError(f"schedule integration failed: {sol.message}")
    return sol.sol


# -- closed forms -------------------------------------------------------------------


@dataclass
class ClosedForm:
    """Exact ``b, alpha, phi``; ``laurent`` holds power -> coefficient maps
    for the power-law family (``alpha`` and ``phi`` are Laurent polynomials)."""

    t: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    laurent: dict = field(default_factory=dict)


def _lmul(p: dict, q: dict) -> dict:
    out: dict = {}
    for i, a in p.items():
        for j, b in q.items():
            out[i + j] = out.get(i + j, 0.0) + a * b
    return out


def _ladd(*ps) -> dict:
    out: dict = {}
    for p in ps:
        for i, a in p.items():
            out[i] = out.get(i, 0.0) + a
    return out


def _lscale(p: dict, c: float) -> dict:
    return {i: c * a for i, a in p.items()}


def _leval(p: dict, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return sum(a * t**i for i, a in p.items()) + 0 * t


def laurent_coefficients(spec: ScheduleSpec) -> dict:
    """Exact Laurent coefficients of ``b``, ``eta``, ``alpha``, ``phi`` for ``a = t^gamma``.

    ``phi`` has powers ``-1 .. 4``; the coefficients of ``t .. t^4`` are the
    constants that a power-law weight adds to the explicit singular and
    constant terms.
    """
    fam = spec.family
    if not isinstance(fam, PowerLaw):
        raise ScheduleError("Laurent coefficients exist for the power-law family only")
    c, g = spec.constants, fam.gamma
    d = c.d
    vb = spec.vbounds
    big_p = (1 + spec.eps1) * g + spec.k_factor * c.k * (g + 1) / c.rho2
    b = {1: 2 * (1 - spec.eps2) * c.rho2 / (g + 1)}
    eta = {-1: d / 4 * big_p, 0: -d / 2 * c.rho1}
    # alpha = t^-g int s^g (4 eta / d)
    alpha = {}
    for p, coef in _lscale(eta, 4 / d).items():
        alpha[p + 1] = alpha.get(p + 1, 0.0) + coef / (g + p + 1)
    terms = [_lscale(_lmul(eta, eta), 2 / d), _lscale(alpha, vb.theta)]
    if vb.gamma1:
        am1 = _ladd(alpha, {0: -1.0})
        terms.append(_lscale(_lmul({1: 1.0 / g}, _lmul(am1, am1)), vb.gamma1**2 / spec.eps1))
    if vb.gamma2:
        terms.append(_lscale(_lmul(b, b), vb.gamma2**2 / (2 * spec.eps2 * c.rho2)))
    src = _ladd(*terms)
    phi = {}
    for p, coef in src.items():
        if coef == 0:
            continue
        if g + p + 1 <= 0:
            raise ScheduleError("phi integrand is not integrable at t = 0")
        phi[p + 1] = phi.get(p + 1, 0.0) + coef / (g + p + 1)
    return {"b": b, "eta": eta, "alpha": alpha, "phi": phi}


def _exp_closed_form(spec: ScheduleSpec, t):
    fam, c = spec.family, spec.constants
    vb = spec.vbounds
    if vb.gamma1 or vb.gamma2 or vb.theta:
        raise ScheduleError("exponential-family closed forms need gamma1 = gamma2 = theta = 0")
    r = fam.rate(c)
    beta = int(fam.beta)
    d = c.d
    kf = spec.k_factor * c.k * (beta + 1) * r / c.rho2
    p0 = (1 + spec.eps1) * r * beta + kf
    p1 = (1 + spec.eps1) * r * (beta + 1) + kf - 2 * c.rho1
    w = np.expm1(r * np.asarray(t, dtype=float))
    b = 2 * (1 - spec.eps2) * c.rho2 * w / ((beta + 1) * r * (1 + w))
    alpha = (p0 / beta + p1 * w / (beta + 1)) / (r * (1 + w))
    phi = d / (8 * r * (1 + w)) * (p0**2 / ((beta - 1) * w) + 2 * p0 * p1 / beta + p1**2 * w / (beta + 1))
    return b, alpha, phi


def closed_form_schedule(spec: ScheduleSpec, t) -> ClosedForm:
    """Exact ``(b, alpha, phi)`` for the power-law and exponential families."""
    t = np.asarray(t, dtype=float)
    if isinstance(spec.family, PowerLaw):
        coeffs = laurent_coefficients(spec)
        return ClosedForm(t, _leval(coeffs["b"], t), _leval(coeffs["alpha"], t), _leval(coeffs["phi"], t), coeffs)
    if isinstance(spec.family, ExpFamily):
        return ClosedForm(t, *_exp_closed_form(spec, t))
    raise ScheduleError("closed forms exist for the power-law and exponential families only")


# -- evaluation on trajectories ------------------------------------------------------


@dataclass
class MarginSeries:
    """One value per stored time, with the cell where it is attained."""

    name: str
    times: np.ndarray
    values: np.ndarray
    cells: list
    tolerance: np.ndarray
    scale: np.ndarray
    sense: str  # "max <= tol" or "min >= -tol"

    @property
    def passed(self) -> bool:
        if self.sense == "upper":
            return bool(np.all(self.values <= self.tolerance))
        return bool(np.all(self.values >= -self.tolerance))

    @property
    def worst_excess(self) -> float:
        if self.sense == "upper":
            return float(np.max(self.values - self.tolerance)) if len(self.values) else -np.inf
        return float(np.max(-self.values - self.tolerance)) if len(self.values) else -np.inf

    def write_csv(self, path) -> None:
        label = "max_F" if self.sense == "upper" else "min_margin"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", label, "arg_i", "arg_j", "arg_k", "tolerance"])
            for t, v, cell, tol in zip(self.times, self.values, self.cells, self.tolerance):
                w.writerow([float(t), float(v), *cell, float(tol)])


TOL_COEF = 10.0


def _centers(traj: Trajectory, need: int, t_range):
    if traj.stencil < need:
        raise ValueError(f"trajectory needs stencil >= {need} for time derivatives")
    lo, hi = t_range if t_range is not None else (0.0, np.inf)
    out = []
    for c in traj.centers:
        t = traj.times[c]
        if t <= 0:
            continue
        if lo - 1e-12 <= t <= hi + 1e-12:
            out.append(int(c))
    return out


def _f_and_ft(traj: Trajectory, c: int):
    dt = traj.dt
    f = np.log(traj.states[c])
    ft = (np.log(traj.states[c + 1]) - np.log(traj.states[c - 1])) / (2 * dt)
    return f, ft


def _F_field(space, traj, V: Potential, sched: LiYauSchedule, c: int):
    t = traj.times[c]
    f, ft = _f_and_ft(traj, c)
    b, alpha, phi = sched(float(t))
    g = gamma(space, f)
    gz = gamma_Z(space, f)
    w = ft + V.at(t)
    F = g + b * gz - alpha * w - phi
    scale = float(np.max(g + b * gz + abs(alpha) * np.abs(w)) + abs(phi))
    return f, F, scale


def _tolerance(space: ModelSpace, dt: float, scale, coef: float):
    h2 = max(space.spacing) ** 2
    return coef * (h2 + dt) * np.asarray(scale)


def harnack_margin(
    traj: Trajectory,
    V: Potential | None,
    sched: LiYauSchedule,
    t_range=None,
    tol_coef: float = TOL_COEF,
) -> MarginSeries:
    """``max_x F(x, t)`` at each stored time with
    ``F = Gamma(log u) + b Gamma^Z(log u) - alpha((log u)_t + V) - phi``.

    ``(log u)_t`` is the centered difference over the neighbouring stored
    steps, so the trajectory must have been stored with ``stencil >= 1``.
    The tolerance is ``tol_coef (h^2 + dt)`` times the size of the terms of
    ``F`` at that time.
    """
    space = traj.space
    V = V if V is not None else Potential.zero(space)
    times, vals, cells, scales = [], [], [], []
    for c in _centers(traj, 1, t_range):
        _, F, scale = _F_field(space, traj, V, sched, c)
        n = int(np.argmax(F))
        times.append(traj.times[c])
        vals.append(float(F.flat[n]))
        cells.append([int(i) for i in np.unravel_index(n, F.shape)])
        scales.append(scale)
    scales = np.array(scales)
    return MarginSeries(
        "harnack", np.array(times), np.array(vals), cells, _tolerance(space, traj.dt, scales, tol_coef), scales, "upper"
    )


def lemma31_margin(
    traj: Trajectory,
    V: Potential | None,
    sched: LiYauSchedule,
    t_range=None,
    tol_coef: float = TOL_COEF,
) -> MarginSeries:
    """``min_x [(L - d/dt) F + 2 Gamma(log u, F) - (a'/a) F]`` at each stored time.

    Needs a trajectory stored with ``stencil >= 2``.
    """
    space = traj.space
    V = V if V is not None else Potential.zero(space)
    times, vals, cells, scales = [], [], [], []
    dt = traj.dt
    for c in _centers(traj, 2, t_range):
        t = float(traj.times[c])
        if t - dt < sched.t_min:
            continue
        f, F, _ = _F_field(space, traj, V, sched, c)
        _, Fm, _ = _F_field(space, traj, V, sched, c - 1)
        _, Fp, _ = _F_field(space, traj, V, sched, c + 1)
        Ft = (Fp - Fm) / (2 * dt)
        LF = apply_L(space, F)
        gfF = 2 * gamma(space, f, F)
        lg = float(sched.evaluate(t)["log_da"][0])
        m = LF - Ft + gfF - lg * F
        scale = float(np.max(np.abs(LF) + np.abs(Ft) + np.abs(gfF) + lg * np.abs(F)))
        n = int(np.argmin(m))
        times.append(t)
        vals.append(float(m.flat[n]))
        cells.append([int(i) for i in np.unravel_index(n, m.shape)])
        scales.append(scale)
    scales = np.array(scales)
    return MarginSeries(
        "lemma31", np.array(times), np.array(vals), cells, _tolerance(space, dt, scales, tol_coef), scales, "lower"
    )


def elliptic_bound(space: ModelSpace, u, V: Potential, constants: CDConstants) -> dict:
    """Empirical constant of the elliptic gradient bound for a stationary ``u``.

    Returns the smallest ``C`` with
    ``Gamma(log u) + rho2/(4|rho1|) Gamma^Z(log u) <= (2 + k/rho2) V + C``
    on the grid, together with the cell where it is attained.
    """
    if constants.rho1 == 0:
        raise ValueError("the elliptic bound needs rho1 != 0")
    f = np.log(space.check(u))
    v = V.fields[0] if V.is_static else None
    if v is None:
        raise ValueError("the elliptic bound needs a time-independent potential")
    lhs = gamma(space, f) + constants.rho2 / (4 * abs(constants.rho1)) * gamma_Z(space, f)
    excess = lhs - (2 + constants.k / constants.rho2) * v
    n = int(np.argmax(excess))
    return {"C": float(excess.flat[n]), "cell": [int(i) for i in np.unravel_index(n, excess.shape)]}
