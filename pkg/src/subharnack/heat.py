"""Implicit time stepping for the Schrödinger flow ``u_t = L u - V u``.

Every discrete operator on a model space commutes with translations in ``z``,
so after a real FFT along ``z`` the implicit system splits into one sparse
``(n_x n_y)``-sized problem per ``z`` mode.  Those are factorized once with a
sparse LU and reused for every step.  Potentials that depend on ``z`` (or on
time) are handled by preconditioned conjugate gradients, with the block solver
for the ``z``-averaged potential as preconditioner.
"""
from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ModelSpace, apply_L, gamma, gamma_Z, integrate

logger = logging.getLogger(__name__)

SOLVER_RTOL = 1e-10


class PositivityError(RuntimeError):
    """The time step could not be reduced enough to keep the solution positive."""


# -- potentials -------------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """A nonnegative potential, static or tabulated in time.

    A time-dependent potential is given by ``times`` and matching ``fields``
    and is interpolated linearly in between (held constant outside).
    """

    space: ModelSpace
    fields: tuple
    times: tuple = ()

    def __post_init__(self):
        fields = tuple(self.space.check(v).copy() for v in self.fields)
        if not fields:
            raise ValueError("a potential needs at least one field")
        if any(np.min(v) < 0 for v in fields):
            raise ValueError("the potential must be nonnegative")
        times = tuple(float(t) for t in self.times)
        if len(fields) > 1 and len(times) != len(fields):
            raise ValueError("a time-dependent potential needs one time per field")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("potential times must be strictly increasing")
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "times", times)

    @classmethod
    def zero(cls, space: ModelSpace) -> "Potential":
        return cls(space, (np.zeros(space.dims),))

    @classmethod
    def constant(cls, space: ModelSpace, c: float) -> "Potential":
        return cls(space, (np.full(space.dims, float(c)),))

    @classmethod
    def static(cls, space: ModelSpace, values) -> "Potential":
        return cls(space, (values,))

    @property
    def is_static(self) -> bool:
        return len(self.fields) == 1

    @property
    def is_zero(self) -> bool:
        return self.is_static and not np.any(self.fields[0])

    @property
    def is_constant(self) -> bool:
        return self.is_static and np.ptp(self.fields[0]) == 0

    @property
    def z_independent(self) -> bool:
        return all(np.ptp(v, axis=2).max() <= 1e-14 * max(1.0, np.abs(v).max()) for v in self.fields)

    def at(self, t: float) -> np.ndarray:
        if self.is_static:
            return self.fields[0]
        ts = self.times
        if t <= ts[0]:
            return self.fields[0]
        if t >= ts[-1]:
            return self.fields[-1]
        n = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[n]) / (ts[n + 1] - ts[n])
        return (1 - w) * self.fields[n] + w * self.fields[n + 1]


@dataclass(frozen=True)
class PotentialBounds:
    gamma1: float
    gamma2: float
    theta: float

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")

    @classmethod
    def zero(cls) -> "PotentialBounds":
        return cls(0.0, 0.0, 0.0)

    def as_dict(self) -> dict:
        return {"gamma1": self.gamma1, "gamma2": self.gamma2, "theta": self.theta}


def potential_bounds(space: ModelSpace, V: Potential) -> PotentialBounds:
    """Grid bounds ``(sqrt max Gamma(V), sqrt max Gamma^Z(V), max LV)``, sup over time."""
    g1 = g2 = 0.0
    theta = -np.inf
    for v in V.fields:
        g1 = max(g1, float(np.max(gamma(space, v))))
        g2 = max(g2, float(np.max(gamma_Z(space, v))))
        theta = max(theta, float(np.max(apply_L(space, v))))
    return PotentialBounds(np.sqrt(g1), np.sqrt(g2), theta)


# -- the z-mode block operator --------------------------------------------------


def _shift_symbol(s: float, theta: np.ndarray) -> np.ndarray:
    # Fourier symbol of the (interpolated) z shift used in ModelSpace._shear_z
    m = np.floor(s)
    w = s - m
    out = np.exp(-1j * theta * m)
    if w > 1e-12:
        out = (1 - w) * out + w * np.exp(-1j * theta * (m + 1))
    return out


class ModeOperator:
    """``L`` restricted to each real-FFT mode along ``z``.

    ``matrices[m]`` acts on the flattened ``(n_x, n_y)`` plane of mode ``m``.
    """

    def __init__(self, space: ModelSpace):
        self.space = space
        n_x, n_y, n_z = space.dims
        h_x, h_y, h_z = space.spacing
        self.n_modes = n_z // 2 + 1
        thetas = 2 * np.pi * np.arange(self.n_modes) / n_z
        npl = n_x * n_y
        idx = np.arange(npl).reshape(n_x, n_y)
        x = np.arange(n_x) / n_x
        self.matrices = []
        for m, th in enumerate(thetas):
            rows, cols, vals = [], [], []

            def add(r, c, v):
                rows.append(np.ravel(r))
                cols.append(np.ravel(c))
                vals.append(np.broadcast_to(v, np.shape(r)).ravel().astype(complex))

            # x second difference with the sheared wrap
            add(idx[:-1], idx[1:], 1 / h_x**2)
            add(idx[1:], idx[:-1], 1 / h_x**2)
            plus = np.array([_shift_symbol(s, th) for s in space.wrap_shift]) if space.sheared else np.ones(n_y)
            minus = np.array([_shift_symbol(-s, th) for s in space.wrap_shift]) if space.sheared else np.ones(n_y)
            add(idx[-1], idx[0], plus / h_x**2)
            add(idx[0], idx[-1], minus / h_x**2)
            # y second difference
            add(idx, np.roll(idx, -1, axis=1), 1 / h_y**2)
            add(idx, np.roll(idx, 1, axis=1), 1 / h_y**2)
            diag = -2 / h_x**2 - 2 / h_y**2
            if space.sheared:
                dz = 1j * np.sin(th) / h_z
                dzz = (2 * np.cos(th) - 2) / h_z**2
                xc = x[:, None] * np.ones((1, n_y))
                add(idx, np.roll(idx, -1, axis=1), 2 * xc * dz / (2 * h_y))
                add(idx, np.roll(idx, 1, axis=1), -2 * xc * dz / (2 * h_y))
                add(idx, idx, diag + xc**2 * dzz)
            else:
                add(idx, idx, np.full((n_x, n_y), diag))
            mat = sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(npl, npl)
            )
            if not np.any(mat.imag.data):
                mat = mat.real.astype(float).tocsc()
            self.matrices.append(mat)

    def factorize(self, c: float, v_plane: np.ndarray) -> "BlockSolver":
        return BlockSolver(self, c, v_plane)


class BlockSolver:
    """Direct solver for ``(I - c (L - V)) u = r`` with ``V`` independent of ``z``.

    All mode blocks are stacked into one block-diagonal system so that a step
    costs a single sparse triangular solve.
    """

    def __init__(self, op: ModeOperator, c: float, v_plane: np.ndarray):
        self.space = op.space
        self.c = c
        shift = sp.diags(1.0 + c * v_plane.ravel())
        blocks = [(shift - c * mat).astype(complex) for mat in op.matrices]
        self.lu = spla.splu(sp.block_diag(blocks, format="csc"), permc_spec="MMD_AT_PLUS_A")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n_x, n_y, n_z = self.space.dims
        coef = np.fft.rfft(rhs, axis=2)
        # stack modes as contiguous (n_x n_y) blocks
        stacked = np.ascontiguousarray(np.moveaxis(coef, 2, 0)).ravel()
        sol = self.lu.solve(stacked).reshape(-1, n_x, n_y)
        return np.fft.irfft(np.moveaxis(sol, 0, 2), n=n_z, axis=2)


# -- trajectories -----------------------------------------------------------


@dataclass
class Trajectory:
    """Stored states of one run.

    ``times`` is strictly increasing.  When the run was made with a stencil,
    each stored time ``t`` is accompanied by the states at ``t +- j dt``
    (``j <= stencil``) so that time derivatives can be taken by centered
    differences between adjacent stored states.
    """

    space: ModelSpace
    times: np.ndarray
    states: list
    dt: float
    stencil: int = 0
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    iterations: list = field(default_factory=list)
    rejected_steps: int = 0
    scheme: str = "cn"

    def __len__(self):
        return len(self.times)

    def index_of(self, t: float) -> int:
        n = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[n] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not stored")
        return n

    def masses(self) -> np.ndarray:
        return np.array([integrate(self.space, u) for u in self.states])

    def summary_rows(self):
        for t, u in zip(self.times, self.states):
            yield {
                "t": float(t),
                "mass": integrate(self.space, u),
                "min_u": float(np.min(u)),
                "max_u": float(np.max(u)),
            }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["t", "mass", "min_u", "max_u"])
            writer.writeheader()
            for row in self.summary_rows():
                writer.writerow(row)

    def write_binary(self, path) -> None:
        write_trajectory(path, self)


MAGIC = b"SUBHTRJ1"


def write_trajectory(path, traj: Trajectory) -> None:
    """Flat checkpoint: magic, dims (3 x int64), count (int64), times, row-major states."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3q", *traj.space.dims))
        fh.write(struct.pack("<q", len(traj.times)))
        fh.write(np.asarray(traj.times, dtype="<f8").tobytes())
        for u in traj.states:
            fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def read_trajectory(path, kind="heisenberg") -> Trajectory:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a trajectory checkpoint")
    dims = struct.unpack_from("<3q", data, 8)
    (count,) = struct.unpack_from("<q", data, 32)
    off = 40
    times = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
    off += 8 * count
    size = int(np.prod(dims))
    states = [
        np.frombuffer(data, dtype="<f8", count=size, offset=off + 8 * size * n).reshape(dims).copy()
        for n in range(count)
    ]
    space = ModelSpace(kind, dims)
    dt = float(np.min(np.diff(times))) if count > 1 else 0.0
    return Trajectory(space, times, states, dt)


# -- the stepper ----------------------------------------------------------------


class HeatSolver:
    """Crank-Nicolson (default) or backward Euler steps of ``u_t = (L - V) u``.

    A constant potential ``V = c`` is integrated exactly: each step solves
    the heat equation and multiplies by ``exp(-c dt)``, which commutes with
    ``L``.
    """

    def __init__(self, space: ModelSpace, V: Potential | None = None, scheme: str = "cn", rtol: float = SOLVER_RTOL):
        if scheme not in ("cn", "be"):
            raise ValueError("scheme must be 'cn' or 'be'")
        self.space = space
        V = V if V is not None else Potential.zero(space)
        self.decay = 0.0
        if V.is_constant and not V.is_zero:
            self.decay = float(V.fields[0].flat[0])
            V = Potential.zero(space)
        self.V = V
        self.scheme = scheme
        self.rtol = rtol
        self.direct = self.V.is_static and self.V.z_independent
        self._ops = None
        self._solvers: dict = {}
        self.last_iterations = 0

    @property
    def modes(self) -> ModeOperator:
        if self._ops is None:
            self._ops = ModeOperator(self.space)
        return self._ops

    def _block(self, c: float) -> BlockSolver:
        if c not in self._solvers:
            v_plane = self.V.fields[0].mean(axis=2) if self.direct else np.mean(
                [v.mean(axis=2) for v in self.V.fields], axis=0
            )
            self._solvers[c] = self.modes.factorize(c, v_plane)
        return self._solvers[c]

    def apply_LV(self, u: np.ndarray, t: float) -> np.ndarray:
        return self._apply(u, t) - self.decay * u

    def _apply(self, u: np.ndarray, t: float) -> np.ndarray:
        return apply_L(self.space, u) - self.V.at(t) * u

    def solve(self, rhs: np.ndarray, c: float, t: float) -> np.ndarray:
        """Solve ``(I - c L^V(t)) u = rhs`` to relative residual ``rtol``."""
        block = self._block(c)
        v = self.V.at(t)

        def op(u):
            return u - c * (apply_L(self.space, u) - v * u)

        rnorm = np.linalg.norm(rhs)
        if self.direct:
            u = block.solve(rhs)
            self.last_iterations = 1
        else:
            shape = self.space.dims
            A = spla.LinearOperator((rhs.size, rhs.size), matvec=lambda w: op(w.reshape(shape)).ravel())
            M = spla.LinearOperator((rhs.size, rhs.size), matvec=lambda w: block.solve(w.reshape(shape)).ravel())
            count = [0]

            def cb(_):
                count[0] += 1

            x0 = block.solve(rhs).ravel()
            sol, info = spla.cg(A, rhs.ravel(), x0=x0, rtol=self.rtol * 1e-2, atol=0.0, M=M, maxiter=500, callback=cb)
            if info != 0:
                raise RuntimeError(f"conjugate gradient did not converge (info={info})")
            u = sol.reshape(shape)
            self.last_iterations = count[0]
        res = np.linalg.norm(op(u) - rhs)
        if rnorm > 0 and res > self.rtol * rnorm:
            raise RuntimeError(f"linear solve residual {res / rnorm:.3g} exceeds {self.rtol:.1g}")
        return u

    def step(self, u: np.ndarray, t: float, dt: float) -> np.ndarray:
        if self.scheme == "cn":
            rhs = u + 0.5 * dt * self._apply(u, t)
            new = self.solve(rhs, 0.5 * dt, t + dt)
        else:
            new = self.solve(u, dt, t + dt)
        if self.decay:
            new *= math.exp(-self.decay * dt)
        return new

    def safe_step(self, u: np.ndarray, t: float, dt: float, dt_min: float) -> tuple[np.ndarray, int]:
        """One step of size ``dt``, recursively halved while positivity fails."""
        new = self.step(u, t, dt)
        if np.min(new) > 0:
            return new, 0
        if dt / 2 < dt_min:
            raise PositivityError(f"positivity lost even at dt={dt:.3g} (dt_min={dt_min:.3g})")
        logger.info("positivity lost at t=%.4g with dt=%.3g; halving", t, dt)
        half, r1 = self.safe_step(u, t, dt / 2, dt_min)
        full, r2 = self.safe_step(half, t + dt / 2, dt / 2, dt_min)
        return full, 1 + r1 + r2


def evolve(
    space: ModelSpace,
    u0,
    V: Potential | None,
    t_end: float,
    dt: float,
    store_every: int = 1,
    stencil: int = 0,
    scheme: str = "cn",
    dt_min: float | None = None,
    callback: Callable[[int, float, np.ndarray], None] | None = None,
    store: bool = True,
    solver: HeatSolver | None = None,
    positive_after: float = 0.0,
) -> Trajectory:
    """Evolve ``u0`` to ``t_end`` in steps of ``dt``.

    States are stored at every ``store_every``-th step (and at ``t_end``); with
    ``stencil = s`` the ``s`` neighbouring steps on each side are stored too.
    ``callback(n, t, u)`` sees every accepted step, which lets reductions run
    without storing states (pass ``store=False``).

    Positivity is enforced (by step halving) only for steps ending after
    ``positive_after``.  The sheared discrete operator has no discrete minimum
    principle, so an under-resolved bump dips slightly below zero before it
    spreads out; a burn-in lets such data be evolved into the resolved regime.
    """
    u = space.check(u0).copy()
    if np.min(u) <= 0 and positive_after <= 0:
        raise ValueError("initial data must be strictly positive")
    if dt <= 0 or t_end < 0:
        raise ValueError("dt must be positive and t_end nonnegative")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be an integer multiple of dt")
    dt_min = dt / 1024 if dt_min is None else dt_min
    solver = solver or HeatSolver(space, V, scheme)
    wanted = set(range(0, n_steps + 1, store_every)) | {n_steps}
    centers = sorted(wanted)
    if stencil:
        centers = [n for n in centers if n - stencil >= 0 and n + stencil <= n_steps]
        wanted = {n + j for n in centers for j in range(-stencil, stencil + 1)}
    times, states, iters = [], [], []
    rejected = 0
    if callback:
        callback(0, 0.0, u)
    if store and 0 in wanted:
        times.append(0.0)
        states.append(u.copy())
    for n in range(1, n_steps + 1):
        t = (n - 1) * dt
        if n * dt > positive_after + 1e-12:
            u, r = solver.safe_step(u, t, dt, dt_min)
        else:
            u, r = solver.step(u, t, dt), 0
        rejected += r
        iters.append(solver.last_iterations)
        if callback:
            callback(n, n * dt, u)
        if store and n in wanted:
            times.append(n * dt)
            states.append(u.copy())
    times = np.array(times)
    center_idx = np.array([int(np.argmin(np.abs(times - n * dt))) for n in centers]) if store and stencil else np.zeros(0, int)
    return Trajectory(space, times, states, dt, stencil, center_idx, iters, rejected, scheme)


def gaussian_bump(space: ModelSpace, x0: Sequence[int], width_cells: float = 2.0) -> np.ndarray:
    """Narrow Gaussian at cell ``x0``, periodized over nearby lattice images, mass one."""
    x, y, z = space.mesh
    n_x, n_y, n_z = space.dims
    cx, cy, cz = (x0[0] / n_x, x0[1] / n_y, x0[2] / n_z)
    sx, sy, sz = (width_cells / n for n in space.dims)
    out = np.zeros(space.dims)
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            for c in (-1, 0, 1):
                # lattice image (x + a, y + b, z + c + a y) of the grid point
                zz = z + c + (a * y if space.sheared else 0.0)
                out += np.exp(
                    -((x + a - cx) ** 2) / (2 * sx**2)
                    - ((y + b - cy) ** 2) / (2 * sy**2)
                    - ((zz - cz) ** 2) / (2 * sz**2)
                )
    out = np.maximum(out, 1e-300)
    return out / integrate(space, out)


def smoothed_delta(space: ModelSpace, x0: Sequence[int], width_cells: float = 2.0, substeps: int = 4) -> np.ndarray:
    """Unit point mass at cell ``x0`` spread by a short implicit heat flow.

    The flow time ``(width_cells h)^2 / 2`` gives a horizontal standard
    deviation of ``width_cells`` cells.  Backward Euler is a symmetric
    function of ``L`` that commutes with the solver, so kernels built from
    these bumps are exactly symmetric in their two points up to the linear
    solver tolerance; coordinate Gaussians are not, because on the
    nilmanifold they are not translates of one another.
    """
    x0 = tuple(int(v) % n for v, n in zip(x0, space.dims))
    u = np.zeros(space.dims)
    u[x0] = 1.0 / space.cell_weight
    h = max(space.spacing[:2])
    s0 = (width_cells * h) ** 2 / 2
    smoother = HeatSolver(space, None, "be")
    for _ in range(substeps):
        u = smoother.step(u, 0.0, s0 / substeps)
    return u


def heat_kernel(
    space: ModelSpace,
    x0: Sequence[int],
    t: float,
    dt: float = 1e-3,
    floor: float = 0.0,
    width_cells: float = 2.0,
    require_positive: bool = True,
    **kw,
) -> np.ndarray:
    """Approximate heat kernel ``p(x0, ., t)``: an evolved two-cell bump.

    The bump is :func:`smoothed_delta`, so the result is the discrete kernel
    at time ``t + (width_cells h)^2 / 2``.  ``floor`` mixes in a uniform
    background of that mass fraction before evolving.  Intermediate states
    may dip below zero on the nilmanifold (see :func:`evolve`), and at
    coarse resolution so can the result for small ``t``; unless
    ``require_positive`` is false that raises :class:`PositivityError`.

    The torus operator has no vertical diffusion, so its kernel is singular
    in ``z`` and is rejected.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if not space.sheared:
        raise ValueError("the torus operator does not diffuse in z; its heat kernel is singular")
    u0 = smoothed_delta(space, x0, width_cells)
    if floor:
        u0 = (1 - floor) * u0 + floor
    n = max(1, int(round(t / dt)))
    dt = t / n
    kw.setdefault("positive_after", t)
    traj = evolve(space, u0, None, t, dt, store_every=n, **kw)
    p = traj.states[-1]
    if require_positive and np.min(p) <= 0:
        raise PositivityError(f"kernel approximation is not yet positive at t={t:.3g}")
    return p


def stationary_state(space: ModelSpace, V: Potential, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray, float]:
    """Positive ground state ``psi`` of ``L - V``, normalized to mass one.

    Returns ``(psi, v_eff, lam)`` with ``(L - V) psi = lam psi``, so ``psi``
    solves ``(L - v_eff) psi = 0`` for ``v_eff = V + lam``.  On a compact
    space ``v_eff`` integrates to zero against ``psi``, so it is nonnegative
    only when it vanishes identically.
    """
    if not V.is_static:
        raise ValueError("stationary states need a time-independent potential")
    v = V.fields[0]
    if V.z_independent:
        op = ModeOperator(space).matrices[0]
        A = (op - sp.diags(v.mean(axis=2).ravel())).tocsc()
        lam, vec = spla.eigsh(A, k=1, sigma=float(-v.min()) + 1.0, which="LM", tol=tol)
        psi_plane = vec[:, 0].reshape(space.dims[:2])
        psi = np.repeat(psi_plane[:, :, None], space.dims[2], axis=2)
    else:
        n = space.size

        def matvec(w):
            w = w.reshape(space.dims)
            return (apply_L(space, w) - v * w).ravel()

        A = spla.LinearOperator((n, n), matvec=matvec)
        lam, vec = spla.eigsh(A, k=1, which="LA", tol=tol)
        psi = vec[:, 0].reshape(space.dims)
    lam = float(lam[0])
    if np.sum(psi) < 0:
        psi = -psi
    psi = psi / integrate(space, psi)
    if np.min(psi) <= 0:
        raise RuntimeError("ground state is not positive")
    return psi, v + lam, lam
