import numpy as np
import pytest

from subharnack.geometry import ModelSpace, apply_L, band_limited_field, gamma, integrate, theta_mode
from subharnack.heat import (
    SOLVER_RTOL,
    HeatSolver,
    PositivityError,
    Potential,
    evolve,
    heat_kernel,
    potential_bounds,
    read_trajectory,
    stationary_state,
    write_trajectory,
)

TAU = 2 * np.pi


def fourier_single_mode(space, t):
    x, _, _ = space.mesh
    return 1 + 0.5 * np.exp(-(TAU**2) * t) * np.sin(TAU * x)


# -- potentials --------------------------------------------------------------------


def test_bounds_of_zero_and_constant_potentials(small_space):
    for V in (Potential.zero(small_space), Potential.constant(small_space, 0.7)):
        b = potential_bounds(small_space, V)
        assert (b.gamma1, b.gamma2, b.theta) == (0.0, 0.0, 0.0)


def test_bounds_of_vertical_wave_on_torus():
    errs = []
    for n in (16, 32, 64):
        s = ModelSpace.torus(4, 4, n)
        _, _, z = s.mesh
        b = potential_bounds(s, Potential.static(s, 1 + 0.5 * np.sin(TAU * z)))
        # the horizontal frame does not see z: Gamma(V) and LV vanish identically
        assert b.gamma1 == 0.0 and b.theta == 0.0
        errs.append(abs(b.gamma2 - np.pi))
    assert errs[2] < errs[1] / 3.5 < errs[0] / 12


def test_negative_potential_is_rejected(torus16):
    v = np.zeros(torus16.dims)
    v[1, 1, 1] = -1e-3
    with pytest.raises(ValueError):
        Potential.static(torus16, v)


# -- evolution ---------------------------------------------------------------------------


def test_constant_data_stays_constant(small_space):
    tr = evolve(small_space, np.ones(small_space.dims), None, 0.5, 1e-2, store_every=10)
    for u in tr.states:
        assert np.max(np.abs(u - 1)) < 1e-13


def test_constant_potential_gives_exponential_decay(small_space):
    c = 0.8
    tr = evolve(small_space, np.ones(small_space.dims), Potential.constant(small_space, c), 1.0, 1e-2, store_every=25)
    for t, u in zip(tr.times, tr.states):
        assert np.max(np.abs(u - np.exp(-c * t))) < 1e-13


def test_fourier_oracle_on_torus():
    s = ModelSpace.torus(32, 32, 4)
    tr = evolve(s, fourier_single_mode(s, 0), None, 0.5, 1e-3, store_every=250)
    for t, u in zip(tr.times, tr.states):
        exact = fourier_single_mode(s, t)
        assert np.sqrt(integrate(s, (u - exact) ** 2) / integrate(s, exact**2)) < 1e-3


def test_initial_data_must_be_positive(torus16):
    with pytest.raises(ValueError):
        evolve(torus16, np.zeros(torus16.dims), None, 0.1, 1e-2)
    with pytest.raises(ValueError):
        evolve(torus16, np.ones(torus16.dims), None, 0.1, -1e-2)
    with pytest.raises(ValueError):
        evolve(torus16, np.ones(torus16.dims), None, 0.1, 3e-2)


def test_semigroup_property(nil16):
    u0 = 2 + band_limited_field(nil16, np.random.default_rng(3), max_freq=2)
    V = Potential.static(nil16, 1 + 0.5 * np.cos(TAU * nil16.mesh[1]))
    whole = evolve(nil16, u0, V, 0.2, 1e-2, store_every=20).states[-1]
    first = evolve(nil16, u0, V, 0.1, 1e-2, store_every=10).states[-1]
    second = evolve(nil16, first, V, 0.1, 1e-2, store_every=10).states[-1]
    assert np.linalg.norm(whole - second) <= 2 * SOLVER_RTOL * np.linalg.norm(whole)


def test_mass_conservation_and_decay(nil16):
    u0 = 2 + band_limited_field(nil16, np.random.default_rng(4), max_freq=2)
    tr = evolve(nil16, u0, None, 0.5, 1e-2, store_every=5)
    m = tr.masses()
    assert np.max(np.abs(m - m[0])) / m[0] <= 1e-8 * 0.5
    x, y, z = nil16.mesh
    V = Potential.static(nil16, 0.5 + 0.5 * np.sin(TAU * y) ** 2)
    m = evolve(nil16, u0, V, 0.5, 1e-2, store_every=5).masses()
    assert np.all(np.diff(m) <= 1e-12)


def test_z_dependent_potential_uses_iterative_solver(nil16):
    V = Potential.static(nil16, 1 + 0.3 * theta_mode(nil16, 1, 0, 0.5, 0.2))
    solver = HeatSolver(nil16, V)
    assert not solver.direct
    u0 = 2 + band_limited_field(nil16, np.random.default_rng(8), max_freq=2)
    u1 = solver.step(u0, 0.0, 1e-2)
    lhs = u1 - 5e-3 * solver.apply_LV(u1, 1e-2)
    rhs = u0 + 5e-3 * solver.apply_LV(u0, 0.0)
    assert np.linalg.norm(lhs - rhs) <= SOLVER_RTOL * np.linalg.norm(rhs)
    assert integrate(nil16, u1) < integrate(nil16, u0)


def test_log_derivative_identity_converges():
    errs = []
    for n, dt in ((16, 4e-3), (32, 1e-3)):
        s = ModelSpace.heisenberg(n, n, 2 * n)
        u0 = 2 + band_limited_field(s, np.random.default_rng(5), max_freq=1)
        V = Potential.static(s, 0.5 + 0.25 * np.sin(TAU * s.mesh[0]) ** 2)
        tr = evolve(s, u0, V, 0.1 + dt, dt, store_every=int(round(0.1 / dt)), stencil=1)
        c = tr.centers[-1]
        f = np.log(tr.states[c])
        ft = (np.log(tr.states[c + 1]) - np.log(tr.states[c - 1])) / (2 * dt)
        res = apply_L(s, f) + gamma(s, f) - ft - V.at(tr.times[c])
        errs.append(np.max(np.abs(res)))
    assert errs[1] < errs[0] / 3


def test_positivity_is_preserved(nil16):
    u0 = 1 + 0.9 * band_limited_field(nil16, np.random.default_rng(6), max_freq=2)
    tr = evolve(nil16, u0, None, 0.3, 1e-2, store_every=1)
    assert min(np.min(u) for u in tr.states) > 0


# -- heat kernel ------------------------------------------------------------------------------


def test_heat_kernel_mass_and_symmetry(nil16):
    x0, y0 = (2, 3, 5), (9, 12, 13)
    p = heat_kernel(nil16, x0, 0.3)
    q = heat_kernel(nil16, y0, 0.3)
    assert np.min(p) > 0
    assert abs(integrate(nil16, p) - 1) < 1e-6
    assert abs(p[y0] - q[x0]) < 1e-6


def test_heat_kernel_symmetry_at_early_time(nil16):
    # still slightly negative at this resolution, but symmetric all the same
    x0, y0 = (2, 3, 5), (9, 12, 13)
    p = heat_kernel(nil16, x0, 0.1, require_positive=False)
    q = heat_kernel(nil16, y0, 0.1, require_positive=False)
    assert abs(p[y0] - q[x0]) < 1e-6
    with pytest.raises(PositivityError):
        heat_kernel(nil16, x0, 0.1)


def test_heat_kernel_long_time_limit():
    s = ModelSpace.heisenberg(12, 12, 24)
    p = heat_kernel(s, (1, 2, 3), 5.0, dt=1e-2)
    assert np.max(np.abs(p - 1)) < 1e-6


def test_heat_kernel_errors(nil16, torus16):
    with pytest.raises(ValueError):
        heat_kernel(nil16, (0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        heat_kernel(torus16, (0, 0, 0), 0.1)


# -- ground states -----------------------------------------------------------------------------


def test_stationary_state_of_constant_potential(nil16):
    psi, v_eff, lam = stationary_state(nil16, Potential.constant(nil16, 0.4))
    assert np.max(np.abs(psi - 1)) < 1e-8
    assert abs(lam + 0.4) < 1e-10
    assert np.max(np.abs(v_eff)) < 1e-10


def test_stationary_state_solves_the_equation(nil16):
    V = Potential.static(nil16, 1 + 0.5 * np.cos(TAU * nil16.mesh[0]))
    psi, v_eff, lam = stationary_state(nil16, V)
    res = apply_L(nil16, psi) - v_eff * psi
    assert np.max(np.abs(res)) < 1e-8 * np.max(np.abs(apply_L(nil16, psi)))


# -- export -------------------------------------------------------------------------------------


def test_binary_round_trip(tmp_path, nil16):
    tr = evolve(nil16, 1 + 0.5 * band_limited_field(nil16, np.random.default_rng(0)), None, 0.05, 1e-2, store_every=2)
    path = tmp_path / "traj.bin"
    write_trajectory(path, tr)
    back = read_trajectory(path)
    assert back.space == nil16
    assert np.array_equal(back.times, tr.times)
    assert all(np.array_equal(a, b) for a, b in zip(back.states, tr.states))


def test_csv_summary(tmp_path, torus16):
    tr = evolve(torus16, np.ones(torus16.dims), None, 0.05, 1e-2, store_every=1)
    path = tmp_path / "steps.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["t", "mass", "min_u", "max_u"]
    assert len(lines) == len(tr.times) + 1
