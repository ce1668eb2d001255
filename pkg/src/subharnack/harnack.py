"""Control distances and parabolic Harnack certificates.

The distance ``rho_delta(x, y, t)`` is the infimum over horizontal curves
``gamma: [0, 1] -> M`` from ``x`` to ``y`` of

    (delta / 4t) int_0^1 |controls|^2 ds + t int_0^1 V(gamma(s), time(s)) ds.

Curves are discretized with piecewise-constant controls.  Each segment is
integrated exactly (``dz = x dy`` along a straight ``(x, y)`` segment gives a
trapezoid), so discrete curves are exactly horizontal.  The returned value is
the cost of a concrete admissible curve, i.e. an upper bound on the
infimum, which only weakens the right-hand side of the Harnack checks.

Seeds for the optimizer are a shortest path on a horizontal grid graph and,
on the nilmanifold, the exact Heisenberg geodesics to nearby lattice lifts
(the group distance is known in closed form through the isoperimetric
profile of circular arcs).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq, minimize
from scipy.sparse.csgraph import dijkstra

from .cd import CDConstants
from .geometry import Kind, ModelSpace, apply_L
from .heat import Potential, PotentialBounds, Trajectory
from .schedule import PowerLaw, ScheduleError, ScheduleSpec, laurent_coefficients

logger = logging.getLogger(__name__)

__all__ = [
    "AdmissibleCurve",
    "CurveResult",
    "HarnackCertificate",
    "HarnackConstants",
    "rho_delta",
    "optimal_curve",
    "heisenberg_distance",
    "cc_distance",
    "harnack_constants",
    "check_harnack_41",
    "check_harnack_42",
]

SEGMENTS = 64


# -- group geometry ------------------------------------------------------------------


def _mul(p, q):
    return (p[0] + q[0], p[1] + q[1], p[2] + q[2] + p[0] * q[1])


def _inv(p):
    return (-p[0], -p[1], -p[2] + p[0] * p[1])


def _area_ratio(theta):
    s = math.sin(theta / 2)
    return (theta - math.sin(theta)) / (8 * s * s)


def heisenberg_distance(q) -> tuple[float, float]:
    """Group distance from the origin to ``q`` and the turning angle of the geodesic.

    A geodesic projects to a circular arc in the ``(x, y)`` plane whose signed
    area against its chord equals ``z - x y / 2``.
    The turning angle is signed like that area.
    """
    r = math.hypot(q[0], q[1])
    area = q[2] - q[0] * q[1] / 2
    if abs(area) <= 1e-15 * max(1.0, r * r):
        return r, 0.0
    sign = 1.0 if area > 0 else -1.0
    if r <= 1e-15:
        return math.sqrt(4 * math.pi * abs(area)), sign * 2 * math.pi
    ratio = abs(area) / (r * r)
    theta = brentq(lambda th: _area_ratio(th) - ratio, 1e-12, 2 * math.pi - 1e-12, xtol=1e-15, rtol=1e-15)
    return r * (theta / 2) / math.sin(theta / 2), sign * theta


def _cell_point(space: ModelSpace, cell):
    return tuple(float(c) / n for c, n in zip(cell, space.dims))


def _lifts(space: ModelSpace, p, q):
    """Candidate displacements ``p^-1 g q`` over nearby lattice elements ``g``."""
    out = []
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            if space.kind is Kind.TORUS:
                out.append((q[0] + a - p[0], q[1] + b - p[1], q[2] - p[2]))
                continue
            w = (q[0] + a, q[1] + b, q[2] + a * q[1])
            disp = _mul(_inv(p), w)
            zs = disp[2] - disp[0] * disp[1] / 2
            c0 = -round(zs)
            for c in (c0 - 1, c0, c0 + 1):
                out.append((disp[0], disp[1], disp[2] + c))
    return out


def cc_distance(space: ModelSpace, x, y) -> float:
    """Carnot-Carathéodory distance between cells.

    Exact on the nilmanifold (minimum of the group distance over lattice
    lifts).  On the torus horizontal curves keep ``z``, so the distance is
    infinite between different ``z`` levels.
    """
    p, q = _cell_point(space, x), _cell_point(space, y)
    if space.kind is Kind.TORUS:
        if x[2] != y[2]:
            return math.inf
        return min(math.hypot(d[0], d[1]) for d in _lifts(space, p, q))
    return min(heisenberg_distance(d)[0] for d in _lifts(space, p, q))


# -- discrete curves -----------------------------------------------------------------


@dataclass
class AdmissibleCurve:
    """Piecewise-constant horizontal controls starting at a lifted point."""

    start: tuple
    controls: np.ndarray  # shape (segments, 2)
    sheared: bool = True

    @property
    def segments(self) -> int:
        return len(self.controls)

    def nodes(self) -> np.ndarray:
        n = self.segments
        a1, a2 = self.controls[:, 0] / n, self.controls[:, 1] / n
        x = self.start[0] + np.concatenate([[0.0], np.cumsum(a1)])
        y = self.start[1] + np.concatenate([[0.0], np.cumsum(a2)])
        if self.sheared:
            dz = a2 * (x[:-1] + x[1:]) / 2
        else:
            dz = np.zeros(n)
        z = self.start[2] + np.concatenate([[0.0], np.cumsum(dz)])
        return np.stack([x, y, z], axis=1)

    def energy(self) -> float:
        return float(np.mean(np.sum(self.controls**2, axis=1)))

    def horizontal_defect(self) -> float:
        """Largest per-segment departure from ``dz = x dy``; zero by construction."""
        nd = self.nodes()
        if not self.sheared:
            return float(np.max(np.abs(np.diff(nd[:, 2])))) if len(nd) > 1 else 0.0
        x, y, z = nd.T
        return float(np.max(np.abs(np.diff(z) - np.diff(y) * (x[:-1] + x[1:]) / 2), initial=0.0))


def _reduce(space: ModelSpace, pts: np.ndarray) -> np.ndarray:
    """Map lifted points into the fundamental domain ``[0, 1)^3``."""
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    a = np.floor(x)
    x = x - a
    if space.sheared:
        z = z - a * y
    y = y - np.floor(y)
    z = z - np.floor(z)
    return np.stack([x, y, z], axis=-1)


class _FieldSampler:
    """Trilinear interpolation of a grid field across the identifications."""

    def __init__(self, space: ModelSpace, values: np.ndarray):
        self.space = space
        n_x, n_y, n_z = space.dims
        pad = np.empty((n_x + 1, n_y + 1, n_z + 1))
        pad[:n_x, :n_y, :n_z] = values
        pad[n_x, :n_y, :n_z] = space.shift_x(values, 1)[-1]
        pad[:, n_y, :n_z] = pad[:, 0, :n_z]
        pad[:, :, n_z] = pad[:, :, 0]
        axes = [np.arange(n + 1) / n for n in space.dims]
        self.interp = RegularGridInterpolator(axes, pad)

    def __call__(self, pts):
        return self.interp(_reduce(self.space, np.asarray(pts, dtype=float)))


# -- grid graph ----------------------------------------------------------------------

_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1),
          (1, 2), (1, -2), (-1, 2), (-1, -2), (2, 1), (2, -1), (-2, 1), (-2, -1)]


@lru_cache(maxsize=4)
def _graph(space: ModelSpace):
    """Horizontal move graph: 16 planar moves, ``z`` snapped to the nearest cell.

    On the torus the graph lives on one ``z`` level (horizontal curves keep
    ``z``); on the nilmanifold every move carries its exact ``z`` increment
    before snapping.
    """
    n_x, n_y, n_z = space.dims
    sheared = space.kind is Kind.HEISENBERG
    shape = (n_x, n_y, n_z) if sheared else (n_x, n_y, 1)
    i, j, k = (a.ravel() for a in np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"))
    src = np.ravel_multi_index((i, j, k), shape)
    rows, cols, wts = [], [], []
    for di, dj in _MOVES:
        x0 = i / n_x
        x1 = (i + di) / n_x
        y1 = (j + dj) / n_y
        length = math.hypot(di / n_x, dj / n_y)
        ii = i + di
        jj = j + dj
        if sheared:
            z1 = k / n_z + (dj / n_y) * (x0 + x1) / 2
            a = np.floor(x1)
            z1 = z1 - a * y1
            kk = np.rint(z1 * n_z).astype(int) % n_z
        else:
            kk = k
        dst = np.ravel_multi_index((ii % n_x, jj % n_y, kk), shape)
        rows.append(src)
        cols.append(dst)
        wts.append(np.full(src.size, length))
    g = sp.csr_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(src.size,) * 2)
    return g, shape


def _dp_path(space: ModelSpace, x, y):
    """Grid shortest path from ``x`` to ``y``; returns (length, list of planar moves)."""
    g, shape = _graph(space)
    xs = (x[0], x[1], x[2] if shape[2] > 1 else 0)
    ys = (y[0], y[1], y[2] if shape[2] > 1 else 0)
    s = int(np.ravel_multi_index(xs, shape))
    e = int(np.ravel_multi_index(ys, shape))
    dist, pred = dijkstra(g, directed=True, indices=s, return_predecessors=True)
    if not np.isfinite(dist[e]):
        raise AssertionError("endpoint unreachable on a connected model space")
    nodes = [e]
    while nodes[-1] != s:
        nodes.append(int(pred[nodes[-1]]))
    nodes.reverse()
    cells = np.array(np.unravel_index(nodes, shape)).T
    moves = []
    for c0, c1 in zip(cells[:-1], cells[1:]):
        di = (c1[0] - c0[0] + shape[0] // 2) % shape[0] - shape[0] // 2
        dj = (c1[1] - c0[1] + shape[1] // 2) % shape[1] - shape[1] // 2
        moves.append((di, dj))
    return float(dist[e]), moves


def _resample(poly: np.ndarray, n: int) -> np.ndarray:
    """Controls of a constant-speed parametrization of a planar polyline."""
    seg = np.diff(poly, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    total = lengths.sum()
    if total == 0:
        return np.zeros((n, 2))
    s = np.concatenate([[0.0], np.cumsum(lengths)])
    targets = np.linspace(0, total, n + 1)
    px = np.interp(targets, s, poly[:, 0])
    py = np.interp(targets, s, poly[:, 1])
    return n * np.stack([np.diff(px), np.diff(py)], axis=1)


def _arc_controls(disp, n: int) -> np.ndarray:
    """Controls of the Heisenberg geodesic from the origin to ``disp``."""
    length, theta = heisenberg_distance(disp)
    if length == 0:
        return np.zeros((n, 2))
    psi = math.atan2(disp[1], disp[0]) if math.hypot(disp[0], disp[1]) > 1e-15 else 0.0
    if theta == 0:
        return np.tile([length * math.cos(psi), length * math.sin(psi)], (n, 1))
    # mean velocity over each segment, so the polygon interpolates the arc
    a = psi - theta / 2 + theta * np.arange(n) / n
    b = a + theta / n
    cx = (np.sin(b) - np.sin(a)) / (theta / n)
    cy = (np.cos(a) - np.cos(b)) / (theta / n)
    return length * np.stack([cx, cy], axis=1)


# -- the optimizer ------------------------------------------------------------------


@dataclass
class CurveResult:
    """Best curve found and its cost.

    ``dp_value`` is the cost of the raw grid-graph path.  On the torus it is a
    genuine admissible curve; on the nilmanifold the graph snaps the vertical
    coordinate, so the path misses the target height and its cost is only a
    rough guide.
    """

    value: float
    energy: float
    potential: float
    curve: AdmissibleCurve
    dp_length: float
    seeds: dict = field(default_factory=dict)
    dp_value: float = math.inf

    @property
    def length(self) -> float:
        return math.sqrt(self.energy)


def _end_residual(curve_start, controls, target, sheared):
    c = AdmissibleCurve(curve_start, controls, sheared)
    return c.nodes()[-1] - np.asarray(target)


def _refine(space, start, target, seed, weight_k, weight_v, sampler, times, sheared, n):
    """Minimize ``weight_k * energy + weight_v * mean V`` with the endpoint fixed."""

    def unpack(v):
        return v.reshape(n, 2)

    def cost(v):
        c = unpack(v)
        val = weight_k * np.mean(np.sum(c**2, axis=1))
        if sampler is not None:
            val += weight_v * _potential_mean(AdmissibleCurve(start, c, sheared), sampler, times)
        return val

    def cost_grad(v):
        return 2 * weight_k * v / n

    def cons(v):
        r = _end_residual(start, unpack(v), target, sheared)
        return r if sheared else r[:2]

    def cons_jac(v):
        c = unpack(v)
        a1 = c[:, 0] / n
        x = start[0] + np.concatenate([[0.0], np.cumsum(a1)])
        jac = np.zeros((3, n, 2))
        jac[0, :, 0] = 1.0 / n
        jac[1, :, 1] = 1.0 / n
        if sheared:
            a2 = c[:, 1]
            tail = np.concatenate([np.cumsum(a2[::-1])[::-1][1:], [0.0]])
            jac[2, :, 0] = (tail + 0.5 * a2) / n**2
            jac[2, :, 1] = (x[:-1] + x[1:]) / (2 * n)
        jac = jac.reshape(3, 2 * n)
        return jac if sheared else jac[:2]

    kw = {}
    if sampler is None:
        kw["jac"] = cost_grad
    res = minimize(
        cost,
        seed.ravel(),
        method="SLSQP",
        constraints=[{"type": "eq", "fun": cons, "jac": cons_jac}],
        options={"maxiter": 300, "ftol": 1e-14},
        **kw,
    )
    ctrl = unpack(res.x)
    defect = np.max(np.abs(cons(res.x)))
    return ctrl, float(defect)


def _potential_mean(curve: AdmissibleCurve, sampler, times) -> float:
    nd = curve.nodes()
    mids = (nd[:-1] + nd[1:]) / 2
    vals = sampler(mids) if not callable(times) else times(mids)
    return float(np.mean(vals))


def _seeds(space: ModelSpace, x, y, segments: int):
    """Starting controls for the curve optimizer, keyed by name, plus the graph length."""
    sheared = space.kind is Kind.HEISENBERG
    p, q = _cell_point(space, x), _cell_point(space, y)
    seeds = {}
    # lattice lifts, ranked by the analytic distance
    lifts = _lifts(space, p, q)
    if sheared:
        ranked = sorted(lifts, key=lambda d: heisenberg_distance(d)[0])[:3]
        for n, disp in enumerate(ranked):
            # left translation by p carries the geodesic from the origin to one from p
            seeds[f"geodesic{n}"] = (_mul(p, disp), _arc_controls(disp, segments))
    else:
        ranked = sorted(lifts, key=lambda d: math.hypot(d[0], d[1]))[:2]
        for n, disp in enumerate(ranked):
            target = (p[0] + disp[0], p[1] + disp[1], p[2])
            seeds[f"line{n}"] = (target, np.tile([disp[0], disp[1]], (segments, 1)).astype(float))
    dp_len, moves = _dp_path(space, x, y)
    poly = np.concatenate([[[0.0, 0.0]], np.cumsum([[di / space.dims[0], dj / space.dims[1]] for di, dj in moves], axis=0)]) if moves else np.zeros((1, 2))
    dp_ctrl = _resample(poly, segments)
    end = AdmissibleCurve(p, dp_ctrl, sheared).nodes()[-1]
    # the lift g.y of y sharing the path's planar end point, nearest in z
    a = round(end[0] - q[0])
    b = round(end[1] - q[1])
    if sheared:
        zq = q[2] + a * q[1]
        seeds["dp"] = (q[0] + a, q[1] + b, zq + round(end[2] - zq)), dp_ctrl
    else:
        seeds["dp"] = (q[0] + a, q[1] + b, p[2]), dp_ctrl
    return seeds, dp_len


@lru_cache(maxsize=4096)
def _geodesic(space: ModelSpace, x, y, segments: int):
    """Least-energy curve from ``x`` to ``y``; it depends on neither ``t`` nor ``delta``."""
    return _search(space, x, y, 1.0, 0.0, None, segments)


def optimal_curve(
    space: ModelSpace,
    x,
    y,
    t: float,
    V: Potential | None = None,
    delta: float = 2.0,
    t_pair=None,
    segments: int = SEGMENTS,
) -> CurveResult:
    """Best admissible curve found for ``rho_delta(x, y, t)``.

    ``t_pair = (t_x, t_y)`` sets the times at which a time-dependent potential
    is sampled at the two ends; the sampling time moves linearly along the
    curve.  Static potentials ignore it.
    """
    if not delta > 1:
        raise ValueError("delta must exceed 1")
    if not t > 0:
        raise ValueError("t must be positive")
    x = tuple(int(v) for v in x)
    y = tuple(int(v) for v in y)
    V = V if V is not None else Potential.zero(space)
    sheared = space.kind is Kind.HEISENBERG
    if not sheared and x[2] != y[2]:
        return CurveResult(math.inf, math.inf, 0.0, AdmissibleCurve(_cell_point(space, x), np.zeros((segments, 2)), False), math.inf)
    # canonical orientation: identical answers for (x, y) and (y, x) when V is static
    if V.is_static and y < x:
        x, y = y, x
    kin = delta / (4 * t)
    const_v = V.is_constant
    sampler = None
    if not const_v:
        if V.is_static:
            sampler = _FieldSampler(space, V.fields[0])
        else:
            t_x, t_y = t_pair if t_pair is not None else (0.0, 0.0)
            samplers = [(tt, _FieldSampler(space, f)) for tt, f in zip(V.times, V.fields)]

            def vt(mids):
                n = len(mids)
                times = t_x + (t_y - t_x) * (np.arange(n) + 0.5) / n
                out = np.empty(n)
                for m, (pt, tm) in enumerate(zip(mids, times)):
                    out[m] = _time_interp(samplers, tm, pt)
                return out

            sampler = vt
    if const_v:
        c = float(V.fields[0].flat[0])
        g = _geodesic(space, x, y, segments)
        report = {n: dict(r) for n, r in g.seeds.items()}
        for r in report.values():
            if "energy" in r:
                r["value"] = kin * r["energy"] + t * c
                r["seed_value"] = kin * r["seed_energy"] + t * c
        out = CurveResult(kin * g.energy + t * c, g.energy, c, g.curve, g.dp_length, report)
        if "dp" in report and "seed_value" in report["dp"]:
            out.dp_value = report["dp"]["seed_value"]
        return out
    return _search(space, x, y, kin, t, sampler, segments)


def _search(space, x, y, kin, t, sampler, segments):
    """Refine every seed and keep the cheapest curve.

    ``sampler`` is ``None`` for a zero potential, in which case the cost is
    ``kin`` times the energy and the analytic gradient is used.
    """
    sheared = space.kind is Kind.HEISENBERG
    p = _cell_point(space, x)
    seeds, dp_len = _seeds(space, x, y, segments)
    best = None
    report = {}
    for name, (target, ctrl) in seeds.items():
        seed_curve = AdmissibleCurve(p, ctrl, sheared)
        ctrl_opt, defect = _refine(space, p, target, ctrl, kin, t, sampler, None, sheared, segments)
        if defect > 1e-9:
            report[name] = {"failed": True, "defect": defect}
            continue
        curve = AdmissibleCurve(p, ctrl_opt, sheared)
        e = curve.energy()
        pot = 0.0 if sampler is None else _potential_mean(curve, sampler, None)
        val = kin * e + t * pot
        seed_pot = 0.0 if sampler is None else _potential_mean(seed_curve, sampler, None)
        report[name] = {"energy": e, "value": val, "seed_energy": seed_curve.energy(),
                        "seed_value": kin * seed_curve.energy() + t * seed_pot}
        if best is None or val < best.value:
            best = CurveResult(val, e, pot, curve, dp_len, report)
    if best is None:
        raise RuntimeError("curve optimization failed for every seed")
    best.seeds = report
    if "dp" in report and "seed_value" in report["dp"]:
        best.dp_value = report["dp"]["seed_value"]
    return best


def _time_interp(samplers, tm, pt):
    ts = [s[0] for s in samplers]
    if tm <= ts[0]:
        return float(samplers[0][1](pt[None])[0])
    if tm >= ts[-1]:
        return float(samplers[-1][1](pt[None])[0])
    n = int(np.searchsorted(ts, tm)) - 1
    w = (tm - ts[n]) / (ts[n + 1] - ts[n])
    return float((1 - w) * samplers[n][1](pt[None])[0] + w * samplers[n + 1][1](pt[None])[0])


def rho_delta(space, x, y, t, V=None, delta=2.0, t_pair=None, segments: int = SEGMENTS) -> float:
    """Upper bound on ``rho_delta(x, y, t)`` from the best curve found."""
    if tuple(x) == tuple(y) and (V is None or V.is_constant):
        c = 0.0 if V is None else float(V.fields[0].flat[0])
        return t * c
    return optimal_curve(space, x, y, t, V, delta, t_pair, segments).value


# -- Harnack certificates -------------------------------------------------------------


@dataclass
class HarnackCertificate:
    x: list
    y: list
    t1: float | None
    t2: float | None
    rho_delta: float
    rhs: float
    lhs: float
    passed: bool
    tol: float
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


@dataclass(frozen=True)
class HarnackConstants:
    """Admissible constants for the parabolic Harnack bound from a power-law schedule.

    ``c_prime[i - 1]`` is ``C_i'`` for ``i = 1..6``; ``delta0`` is the largest
    value of ``alpha`` on ``(0, t2]``.
    """

    c_prime: tuple
    delta0: float
    alpha_min: float
    t2: float

    def exponent(self, t1: float, t2: float) -> float:
        c = self.c_prime
        out = c[0] * math.log(t2 / t1)
        for i in range(1, 6):
            out += c[i] / i * (t2**i - t1**i)
        return out


def harnack_constants(spec: ScheduleSpec, t2: float) -> HarnackConstants:
    """``C_i'`` and ``delta0`` on ``(0, t2]`` for a power-law schedule.

    With ``alpha = alpha_0 + alpha_1 t`` and ``phi = sum_p c_p t^p``
    (``p = -1..4``), ``phi / alpha <= sum_p max(c_p, 0) t^p / min alpha``,
    so ``C_i' = max(c_{i-2}, 0) / min alpha`` is admissible, and ``delta``
    must exceed ``max alpha`` to absorb the ``alpha``-weighted time
    derivative.
    """
    if not isinstance(spec.family, PowerLaw):
        raise ScheduleError("Harnack constants are built from a power-law schedule")
    co = laurent_coefficients(spec)
    al = co["alpha"]
    a0 = al.get(0, 0.0)
    a1 = al.get(1, 0.0)
    ends = [a0, a0 + a1 * t2]
    amin, amax = min(ends), max(ends)
    if amin <= 0:
        raise ScheduleError(f"alpha is not positive on (0, {t2}]")
    phi = co["phi"]
    c_prime = tuple(max(phi.get(i - 2, 0.0), 0.0) / amin for i in range(1, 7))
    return HarnackConstants(c_prime, amax, amin, t2)


def check_harnack_41(
    traj: Trajectory,
    V: Potential | None,
    spec: ScheduleSpec,
    x,
    t1: float,
    y,
    t2: float,
    delta: float,
    tol: float = 1e-6,
    constants: HarnackConstants | None = None,
    segments: int = SEGMENTS,
) -> HarnackCertificate:
    """Check ``u(x,t1) <= u(y,t2) (t2/t1)^{C1'} exp(rho_delta(x,y,t2-t1) + sum (C'_{i+1}/i)(t2^i - t1^i))``."""
    if not 0 < t1 < t2:
        raise ValueError("need 0 < t1 < t2")
    hc = constants or harnack_constants(spec, t2)
    if hc.t2 < t2 * (1 - 1e-12):
        raise ValueError("Harnack constants were built for a shorter horizon")
    if not delta > hc.delta0:
        raise ValueError(f"delta must exceed delta0 = {hc.delta0:.6g}")
    space = traj.space
    u1 = traj.states[traj.index_of(t1)]
    u2 = traj.states[traj.index_of(t2)]
    x = tuple(int(v) for v in x)
    y = tuple(int(v) for v in y)
    rho = rho_delta(space, x, y, t2 - t1, V, delta, t_pair=(t1, t2), segments=segments)
    lhs = float(u1[x])
    log_rhs = math.log(u2[y]) + rho + hc.exponent(t1, t2)
    rhs = math.exp(min(log_rhs, 700.0))
    passed = lhs <= rhs * (1 + tol)
    return HarnackCertificate(
        list(x), list(y), float(t1), float(t2), float(rho), rhs, lhs, bool(passed), tol,
        {"delta": delta, "delta0": hc.delta0, "c_prime": list(hc.c_prime), "log_rhs": log_rhs,
         "constants_note": "admissible choice of C_i' and delta0, not unique"},
    )


def check_harnack_42(
    space: ModelSpace,
    u,
    V: Potential,
    constants: CDConstants,
    vbounds: PotentialBounds | None = None,
    budget: float = 1.0,
    samples: int = 12,
    seed: int = 0,
    residual_tol: float = 1e-8,
    tol: float = 1e-9,
    segments: int = 32,
) -> HarnackCertificate:
    """Smallest ``C`` with ``u(x) <= u(y) exp(C d(x, y))`` over sampled cell pairs.

    ``d`` is the curve energy plus the path integral of ``V``.  The input
    must solve ``L u = V u`` to ``residual_tol`` relative; the certificate
    passes when the smallest constant ``C*`` stays within ``budget``.
    """
    u = space.check(u)
    if not V.is_static:
        raise ValueError("stationary checks need a time-independent potential")
    if constants.rho1 == 0:
        raise ValueError("the elliptic Harnack bound needs rho1 != 0")
    if np.min(u) <= 0:
        raise ValueError("u must be positive")
    v = V.fields[0]
    lu = apply_L(space, u)
    res = float(np.max(np.abs(lu - v * u)))
    scale = float(np.max(np.abs(lu)) + np.max(np.abs(v * u)) + np.max(np.abs(u)))
    if res > residual_tol * scale:
        raise ValueError(f"u is not stationary (residual {res:.3g}, scale {scale:.3g})")
    rng = np.random.default_rng(seed)
    cells = {tuple(int(i) for i in np.unravel_index(np.argmax(u), u.shape)),
             tuple(int(i) for i in np.unravel_index(np.argmin(u), u.shape))}
    while len(cells) < samples:
        cells.add(tuple(int(rng.integers(n)) for n in space.dims))
    if space.kind is Kind.TORUS:
        z0 = next(iter(cells))[2]
        cells = {(c[0], c[1], z0) for c in cells}
    cells = sorted(cells)
    logu = np.log(u)
    best = (0.0, cells[0], cells[0], 0.0)
    for a in cells:
        for b in cells:
            if a == b:
                continue
            num = logu[a] - logu[b]
            if num <= 0:
                continue
            dist = optimal_curve(space, a, b, 1.0, V, 4.0, segments=segments).value
            c_ab = num / dist if dist > 0 else math.inf
            if c_ab > best[0]:
                best = (c_ab, a, b, dist)
    c_star, a, b, dist = best
    lhs = float(u[a])
    rhs = float(u[b] * math.exp(min(budget * dist, 700.0)))
    return HarnackCertificate(
        list(a), list(b), None, None, float(dist), rhs, lhs, bool(c_star <= budget and lhs <= rhs * (1 + tol)), tol,
        {"C_star": c_star, "budget": budget, "residual": res, "pairs": len(cells) * (len(cells) - 1)},
    )
