"""Nash and Perelman-type entropies along heat-flow trajectories.

With ``u`` of mass one,

    g           = -log u - (tau D / 2) log(4 pi t)
    N           = -int u log u
    N_tilde     = N - (tau D / 2)(log(4 pi t) + 1)
    W           = int u (t Gamma(g) + g - tau D)
    W_varsigma  = W + varsigma t^2 B,      B = int u Gamma^Z(log u).

Time derivatives are finite differences of the stored series: centered
three-point for first derivatives, five-point for the second derivative of
``N`` when the trajectory carries a two-step stencil.

Besides the finite differences, every state also yields the *semi-discrete*
derivatives, i.e. the exact time derivatives of the spatially discretized
flow ``u_t = L_h u``.  They separate the two error sources of the derivative
identities: the gap between a finite difference and the semi-discrete value
is the time-discretization error, and the gap between the semi-discrete value
and the Gamma-calculus expression is the (grid-dependent, time-step free)
spatial floor.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cd import CDConstants
from .geometry import ModelSpace, apply_L, gamma, gamma2, gamma2_Z, gamma_Z, integrate
from .heat import Trajectory

__all__ = [
    "EntropyParams",
    "EntropySeries",
    "EntropyAccumulator",
    "IdentityResiduals",
    "state_integrals",
    "entropies",
    "lemma52_check",
    "monotonicity_report",
]

MASS_TOL = 1e-8
TOL_MONO_REL = 1e-3
FLOOR_COEF = 10.0


@dataclass(frozen=True)
class EntropyParams:
    """Entropy parameters built from certified curvature-dimension constants.

    ``gamma_variant`` switches the dimension constant to its one-parameter
    generalization; the value 2 gives back the default constant.
    """

    constants: CDConstants
    tau: float
    varsigma: float
    gamma_variant: float | None = None

    def __post_init__(self):
        c = self.constants
        if not c.finite_dimension:
            raise ValueError("entropies need a finite dimension d")
        if not self.tau >= 1:
            raise ValueError("tau must be at least 1")
        if not math.isfinite(self.varsigma):
            raise ValueError("varsigma must be finite")
        if self.gamma_variant is not None and not self.gamma_variant > 1:
            raise ValueError("gamma_variant must exceed 1")

    @classmethod
    def default(cls, constants: CDConstants, varsigma: float | None = None, gamma_variant=None) -> "EntropyParams":
        """``tau = 2 + 2k/rho2`` and ``varsigma = rho2`` unless given."""
        return cls(
            constants,
            2 + 2 * constants.k / constants.rho2,
            constants.rho2 if varsigma is None else varsigma,
            gamma_variant,
        )

    @property
    def gradient_factor(self) -> float:
        """Coefficient of ``g_t`` in the Nash integrand."""
        c = self.constants
        if self.gamma_variant is None:
            return 1 + 3 * c.k / (2 * c.rho2)
        g = self.gamma_variant
        return 1 + (1 + g) * c.k / (g * c.rho2)

    @property
    def D(self) -> float:
        c = self.constants
        if self.gamma_variant is None:
            return c.d * (1 + 3 * c.k / (2 * c.rho2)) ** 2
        g = self.gamma_variant
        return c.d * g**2 / (4 * (g - 1)) * (1 + (1 + g) * c.k / (g * c.rho2)) ** 2

    @property
    def varsigma_range(self) -> tuple[float, float]:
        r2 = self.constants.rho2
        if self.gamma_variant is None:
            return r2, 5 * r2 / 3
        g = self.gamma_variant
        return r2, (3 + g) / (1 + g) * r2

    @property
    def tau_min_perelman(self) -> float:
        return 2 + 2 * self.constants.k / self.constants.rho2

    @property
    def nash_regime(self) -> bool:
        return self.tau >= 1 and self.constants.rho1 >= 0

    @property
    def perelman_regime(self) -> bool:
        lo, hi = self.varsigma_range
        return self.constants.rho1 >= 0 and lo <= self.varsigma <= hi and self.tau >= self.tau_min_perelman

    def as_dict(self) -> dict:
        return {
            "constants": self.constants.as_dict(),
            "tau": self.tau,
            "varsigma": self.varsigma,
            "gamma_variant": self.gamma_variant,
            "D": self.D,
        }


def state_integrals(space: ModelSpace, u) -> dict:
    """Parameter-free integrals of one state, including semi-discrete derivatives."""
    u = space.check(u)
    f = np.log(u)
    lu = apply_L(space, u)
    lf = apply_L(space, f)
    gf = gamma(space, f)
    gzf = gamma_Z(space, f)
    ft = lu / u
    return {
        "mass": integrate(space, u),
        "N": -integrate(space, u * f),
        "G": integrate(space, u * gf),
        "B": integrate(space, u * gzf),
        "Lsq": integrate(space, u * lf * lf),
        "G2": integrate(space, u * gamma2(space, f, check_resolution=False)),
        "G2Z": integrate(space, u * gamma2_Z(space, f, check_resolution=False)),
        # exact derivatives of the semi-discrete flow u_t = L_h u
        "sd_dN": -integrate(space, lu * f),
        "sd_d2N": -integrate(space, lu * lf + lu * lu / u),
        "sd_dB": integrate(space, lu * gzf + 2 * u * gamma_Z(space, f, ft)),
    }


@dataclass
class EntropySeries:
    """Entropy values at the evaluation times and their finite differences."""

    params: EntropyParams
    times: np.ndarray
    spacing: float
    N: np.ndarray
    N_tilde: np.ndarray
    W: np.ndarray
    W_varsigma: np.ndarray
    B: np.ndarray
    dN: np.ndarray
    dN_tilde: np.ndarray
    dW: np.ndarray
    dW_varsigma: np.ndarray
    dB: np.ndarray
    d2N: np.ndarray
    W_from_N: np.ndarray
    ug_t: np.ndarray
    nash_integrand: np.ndarray
    integrals: dict = field(default_factory=dict)
    h2: float = 0.0

    @property
    def W_gap(self) -> np.ndarray:
        """Integral formula minus ``d/dt (t N_tilde)``."""
        return self.W - self.W_from_N

    @property
    def W_gap_spatial(self) -> np.ndarray:
        """The part of the gap that survives ``dt -> 0``."""
        return self.times * (self.integrals["G"] - self.integrals["sd_dN"])

    @property
    def W_gap_temporal(self) -> np.ndarray:
        return self.W_gap - self.W_gap_spatial

    def rows(self):
        for n, t in enumerate(self.times):
            yield [t, self.N[n], self.N_tilde[n], self.W[n], self.W_varsigma[n], self.B[n], self.dN_tilde[n], self.dW_varsigma[n]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "N", "N_tilde", "W", "W_varsigma", "B", "dN_tilde_dt", "dW_varsigma_dt"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def _d1(vals, n, h):
    return (vals[n + 1] - vals[n - 1]) / (2 * h)


def _d2(vals, n, h, wide):
    if wide:
        return (-vals[n + 2] + 16 * vals[n + 1] - 30 * vals[n] + 16 * vals[n - 1] - vals[n - 2]) / (12 * h * h)
    return (vals[n + 1] - 2 * vals[n] + vals[n - 1]) / (h * h)


class _Chains:
    """Groups of equally spaced stored states around each evaluation time."""

    def __init__(self, traj: Trajectory):
        times = np.asarray(traj.times, dtype=float)
        if len(times) < 3:
            raise ValueError("need at least three stored times")
        if traj.stencil:
            self.width = min(traj.stencil, 2)
            self.centers = [int(c) for c in traj.centers]
            self.spacing = traj.dt
        else:
            steps = np.diff(times)
            if np.ptp(steps) > 1e-9 * steps.max():
                raise ValueError("entropy series need uniformly spaced stored times")
            self.spacing = float(steps.mean())
            self.width = 2 if len(times) >= 5 else 1
            self.centers = list(range(self.width, len(times) - self.width))
        self.centers = [c for c in self.centers if times[c] - self.width * self.spacing > 1e-12]
        if not self.centers:
            raise ValueError("no evaluation time with positive neighbours (g is undefined at t = 0)")


def _check_mass(m: float) -> None:
    if abs(m - 1) > MASS_TOL:
        raise ValueError(f"mass {m:.12g} differs from 1; renormalize the initial data")


def _series(params: EntropyParams, space: ModelSpace, groups, spacing: float, wide: bool) -> EntropySeries:
    """``groups``: list of (t, [integrals at t + j*spacing for j = -w..w])."""
    tD = params.tau * params.D
    w = 2 if wide else 1
    out = {k: [] for k in ("t", "N", "Nt", "W", "Ws", "B", "dN", "dNt", "dW", "dWs", "dB", "d2N", "WN", "ugt", "nash")}
    ints = {k: [] for k in ("G", "B", "Lsq", "G2", "G2Z", "sd_dN", "sd_d2N", "sd_dB", "ft_mass")}
    for t, chain in groups:
        for q in chain:
            _check_mass(q["mass"])
        ts = t + spacing * np.arange(-w, w + 1)
        N = np.array([q["N"] for q in chain])
        G = np.array([q["G"] for q in chain])
        B = np.array([q["B"] for q in chain])
        mass = np.array([q["mass"] for q in chain])
        Nt = N - tD / 2 * (np.log(4 * np.pi * ts) + 1)
        ug = N - tD / 2 * np.log(4 * np.pi * ts) * mass
        W = ts * G + ug - tD * mass
        Ws = W + params.varsigma * ts**2 * B
        c = w
        q0 = chain[c]
        ft_mass = q0["ft_mass"]
        ugt = -tD / (2 * t) * q0["mass"] - ft_mass
        out["t"].append(t)
        out["N"].append(N[c])
        out["Nt"].append(Nt[c])
        out["W"].append(W[c])
        out["Ws"].append(Ws[c])
        out["B"].append(B[c])
        out["dN"].append(_d1(N, c, spacing))
        out["dNt"].append(_d1(Nt, c, spacing))
        out["dW"].append(_d1(W, c, spacing))
        out["dWs"].append(_d1(Ws, c, spacing))
        out["dB"].append(_d1(B, c, spacing))
        out["d2N"].append(_d2(N, c, spacing, wide))
        out["WN"].append(_d1(ts * Nt, c, spacing))
        out["ugt"].append(ugt)
        kk = params.constants.k / params.constants.rho2
        last = 3 * kk * tD / (4 * t) if params.gamma_variant is None else (
            (params.gamma_variant + 1) * kk * tD / (2 * params.gamma_variant * t))
        out["nash"].append(G[c] + params.gradient_factor * ugt + last)
        for k in ints:
            ints[k].append(q0[k])
    arr = {k: np.array(v, dtype=float) for k, v in out.items()}
    return EntropySeries(
        params, arr["t"], spacing, arr["N"], arr["Nt"], arr["W"], arr["Ws"], arr["B"],
        arr["dN"], arr["dNt"], arr["dW"], arr["dWs"], arr["dB"], arr["d2N"], arr["WN"], arr["ugt"], arr["nash"],
        {k: np.array(v) for k, v in ints.items()}, max(space.spacing) ** 2,
    )


def _chain_integrals(space, states, centers, width, spacing):
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = state_integrals(space, states[n])
        return cache[n]

    groups = []
    for c in centers:
        chain = [dict(get(c + j)) for j in range(-width, width + 1)]
        # int u f_t by a centered difference of log u
        ft = (np.log(states[c + 1]) - np.log(states[c - 1])) / (2 * spacing)
        chain[width]["ft_mass"] = integrate(space, states[c] * ft)
        groups.append(chain)
    return groups


def entropies(traj: Trajectory, params: EntropyParams) -> EntropySeries:
    """Entropy series at the trajectory's evaluation times.

    A trajectory stored with a stencil is evaluated at its centers;
    otherwise stored times must be uniformly spaced and every interior time
    is used.  The heat flow must conserve mass one; ``t = 0`` is never an
    evaluation time since ``g`` is undefined there.
    """
    ch = _Chains(traj)
    groups = _chain_integrals(traj.space, traj.states, ch.centers, ch.width, ch.spacing)
    times = [float(traj.times[c]) for c in ch.centers]
    return _series(params, traj.space, list(zip(times, groups)), ch.spacing, ch.width == 2)


class EntropyAccumulator:
    """Step callback for :func:`subharnack.heat.evolve` that keeps only scalars.

    Integrals are taken at every ``every``-th step and its ``width`` neighbours
    on each side; :meth:`series` assembles the entropy series afterwards.
    """

    def __init__(self, space: ModelSpace, dt: float, every: int, width: int = 2, t_min: float = 0.0):
        if width not in (1, 2):
            raise ValueError("width must be 1 or 2")
        self.space = space
        self.dt = dt
        self.every = every
        self.width = width
        self.t_min = t_min
        self.data = {}
        self.logs = {}
        self.centers = {}

    def _is_center(self, n: int) -> bool:
        return n % self.every == 0 and n * self.dt >= self.t_min - 1e-12 and n - self.width > 0

    def __call__(self, n: int, t: float, u: np.ndarray) -> None:
        near = [n + j for j in range(-self.width, self.width + 1) if self._is_center(n + j)]
        if not near:
            return
        self.data[n] = state_integrals(self.space, u)
        if self._is_center(n - 1) or self._is_center(n + 1):
            self.logs[n] = np.log(u)
        if self._is_center(n):
            self.centers[n] = u.copy()

    def series(self, params: EntropyParams) -> EntropySeries:
        groups = []
        w = self.width
        for n in sorted(self.centers):
            if not all((n + j) in self.data for j in range(-w, w + 1)):
                continue
            chain = [dict(self.data[n + j]) for j in range(-w, w + 1)]
            ft = (self.logs[n + 1] - self.logs[n - 1]) / (2 * self.dt)
            chain[w]["ft_mass"] = integrate(self.space, self.centers[n] * ft)
            groups.append((n * self.dt, chain))
        if not groups:
            raise ValueError("no complete stencil was recorded")
        return _series(params, self.space, groups, self.dt, w == 2)


@dataclass
class IdentityResiduals:
    """Residuals of the two second-order entropy identities.

    ``res_N = |d2N + 2 int u Gamma_2(log u)|`` and
    ``res_B = |dB + 2 int u Gamma_2^Z(log u)|`` with finite-difference
    derivatives; ``rel_*`` divide by the size of the two sides.  The
    ``spatial_*`` entries are the same residuals with the exact semi-discrete
    derivatives, i.e. the part that no time-step refinement removes.
    """

    times: np.ndarray
    res_N: np.ndarray
    res_B: np.ndarray
    rel_N: np.ndarray
    rel_B: np.ndarray
    spatial_N: np.ndarray
    spatial_B: np.ndarray
    temporal_N: np.ndarray
    temporal_B: np.ndarray

    def as_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}


def lemma52_check(traj: Trajectory, params: EntropyParams | None = None, V=None) -> IdentityResiduals:
    """Compare finite-difference ``N''`` and ``B'`` with the iterated-form integrals."""
    if V is not None and not V.is_zero:
        raise ValueError("the entropy identities hold for the heat equation (V = 0)")
    if params is None:
        params = EntropyParams(CDConstants(0.0, 1.0, 0.0, 2.0), 1.0, 1.0)
    s = entropies(traj, params)
    i = s.integrals
    g2 = -2 * i["G2"]
    g2z = -2 * i["G2Z"]
    res_n = np.abs(s.d2N - g2)
    res_b = np.abs(s.dB - g2z)
    scale_n = np.abs(s.d2N) + np.abs(g2)
    scale_b = np.abs(s.dB) + np.abs(g2z)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel_n = np.where(scale_n > 0, res_n / np.where(scale_n > 0, scale_n, 1), 0.0)
        rel_b = np.where(scale_b > 0, res_b / np.where(scale_b > 0, scale_b, 1), 0.0)
    return IdentityResiduals(
        s.times, res_n, res_b, rel_n, rel_b,
        np.abs(i["sd_d2N"] - g2), np.abs(i["sd_dB"] - g2z),
        np.abs(s.d2N - i["sd_d2N"]), np.abs(s.dB - i["sd_dB"]),
    )


def monotonicity_report(series: EntropySeries, params: EntropyParams | None = None, rel_tol: float = TOL_MONO_REL,
                        floor_coef: float = FLOOR_COEF) -> dict:
    """Check the sign of the entropy derivatives at every evaluation time.

    ``tol_mono = rel_tol * scale + floor`` where ``scale`` is the largest
    magnitude of the derivative series and the floor is
    ``floor_coef (h^2 + dt^2)`` times the size of the terms at that time.
    Checks outside the parameter regime of the monotonicity statements are
    computed and reported but not asserted.
    """
    p = params or series.params
    t = series.times
    i = series.integrals
    tD = p.tau * p.D
    size = np.abs(i["G"]) + t * np.abs(i["G2"]) + p.varsigma * t**2 * np.abs(i["G2Z"]) + tD / (2 * t) + t * np.abs(i["Lsq"])
    floor = floor_coef * (series.h2 + series.spacing**2) * size

    def tol_for(vals):
        return rel_tol * float(np.max(np.abs(vals))) + floor

    sharp = -(2 * t / p.constants.d) * i["Lsq"] + p.D / (2 * t) * (2 * (p.constants.k + p.varsigma) / p.varsigma - p.tau)
    checks = {}

    def add(name, excess, asserted, tol):
        excess = np.asarray(excess)
        n = int(np.argmax(excess - tol))
        checks[name] = {
            "asserted": bool(asserted),
            "passed": bool(np.all(excess <= tol)),
            "worst_excess": float((excess - tol)[n]),
            "worst_time": float(t[n]),
        }

    add("nash_decreasing", series.dN_tilde, p.nash_regime, tol_for(series.dN_tilde))
    add("perelman_decreasing", series.dW_varsigma, p.perelman_regime, tol_for(series.dW_varsigma))
    add("perelman_sharp", series.dW_varsigma - sharp, p.perelman_regime, tol_for(series.dW_varsigma))
    add("nash_entropy_increasing", -series.dN, True, tol_for(series.dN))
    regime = "in regime" if p.nash_regime and p.perelman_regime else "out of regime"
    return {
        "regime": regime,
        "params": p.as_dict(),
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values() if c["asserted"]),
    }
