import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subharnack.cd import CDConstants
from subharnack.geometry import ModelSpace
from subharnack.harnack import (
    cc_distance,
    check_harnack_41,
    check_harnack_42,
    harnack_constants,
    heisenberg_distance,
    optimal_curve,
    rho_delta,
)
from subharnack.heat import Potential, Trajectory, evolve
from subharnack.schedule import ExpFamily, PowerLaw, ScheduleError, ScheduleSpec

TAU = 2 * np.pi
NIL = ModelSpace.heisenberg(16, 16, 32)
TORUS = ModelSpace.torus(16)


# -- group geometry -------------------------------------------------------------------------


def test_heisenberg_distance_special_cases():
    assert heisenberg_distance((0.3, -0.4, 0.5 * 0.3 * -0.4))[0] == pytest.approx(0.5)
    # pure vertical displacement: a full circle enclosing area |z|
    assert heisenberg_distance((0, 0, 0.25))[0] == pytest.approx(math.sqrt(4 * math.pi * 0.25))
    assert heisenberg_distance((0, 0, 0))[0] == 0.0


def test_cc_distance_on_torus():
    assert cc_distance(TORUS, (0, 0, 3), (4, 0, 3)) == pytest.approx(0.25)
    assert cc_distance(TORUS, (0, 0, 3), (15, 0, 3)) == pytest.approx(1 / 16)
    assert cc_distance(TORUS, (0, 0, 3), (0, 0, 4)) == math.inf


def test_curves_are_horizontal():
    r = optimal_curve(NIL, (1, 2, 3), (9, 5, 20), 0.5)
    assert r.curve.horizontal_defect() < 1e-12
    start = r.curve.nodes()[0]
    assert np.allclose(start, [1 / 16, 2 / 16, 3 / 32])


# -- rho_delta ------------------------------------------------------------------------------


@pytest.mark.parametrize("space", [TORUS, NIL])
def test_rho_vanishes_on_the_diagonal(space):
    assert rho_delta(space, (3, 4, 5), (3, 4, 5), 0.7) == 0.0
    assert rho_delta(space, (3, 4, 5), (3, 4, 5), 0.7, Potential.constant(space, 0.5)) == pytest.approx(0.35)


@pytest.mark.parametrize("cells,delta,t", [(5, 2.0, 0.5), (3, 1.5, 0.1), (8, 4.0, 1.0)])
def test_torus_straight_line(cells, delta, t):
    L = cells / 16
    r = optimal_curve(TORUS, (0, 2, 2), (cells, 2, 2), t, delta=delta)
    assert r.value == pytest.approx(delta * L**2 / (4 * t), rel=0.02)
    c = 0.3
    rc = rho_delta(TORUS, (0, 2, 2), (cells, 2, 2), t, Potential.constant(TORUS, c), delta)
    assert rc == pytest.approx(delta * L**2 / (4 * t) + t * c, rel=0.02)


def test_torus_graph_seed_is_close():
    for y in [(5, 0, 1), (4, 3, 1), (7, 7, 1)]:
        r = optimal_curve(TORUS, (0, 0, 1), y, 0.5)
        assert r.dp_value <= 1.1 * r.value


def test_constant_potential_on_nilmanifold_uses_cc_distance():
    x, y = (1, 2, 3), (9, 5, 20)
    d = cc_distance(NIL, x, y)
    t, c, delta = 0.4, 0.7, 3.0
    val = rho_delta(NIL, x, y, t, Potential.constant(NIL, c), delta)
    assert val == pytest.approx(delta * d**2 / (4 * t) + t * c, rel=0.01)


def test_rho_is_monotone_in_t():
    x, y = (0, 0, 0), (5, 9, 12)
    ts = [0.05, 0.1, 0.3, 1.0, 2.0]
    vals = [rho_delta(NIL, x, y, t) for t in ts]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    # the same curve is optimal for every t
    assert len({optimal_curve(NIL, x, y, t).energy for t in ts}) == 1


cells = st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(0, 31))


@settings(max_examples=8)
@given(x=cells, y=cells)
def test_rho_is_symmetric_for_static_potential(x, y):
    V = Potential.static(NIL, 0.5 + 0.4 * np.cos(TAU * NIL.mesh[1]))
    a = rho_delta(NIL, x, y, 0.5, V, segments=16)
    b = rho_delta(NIL, y, x, 0.5, V, segments=16)
    assert abs(a - b) <= 1e-4 * max(1.0, abs(a))


@settings(max_examples=10)
@given(x=cells, y=cells, z=cells)
def test_length_is_subadditive(x, y, z):
    e = {}
    for p, q in ((x, y), (y, z), (x, z)):
        e[p, q] = optimal_curve(NIL, p, q, 1.0, segments=32).energy
    assert math.sqrt(e[x, z]) <= math.sqrt(e[x, y]) + math.sqrt(e[y, z]) + 1e-6


def test_rho_argument_validation():
    with pytest.raises(ValueError):
        rho_delta(NIL, (0, 0, 0), (1, 1, 1), 0.5, delta=1.0)
    with pytest.raises(ValueError):
        rho_delta(NIL, (0, 0, 0), (1, 1, 1), 0.0)


# -- integrated Harnack certificates ------------------------------------------------------------------


SPEC = ScheduleSpec(PowerLaw(2.0), CDConstants(0, 0.5, 1, 2), 0.5, 0.5)


def test_constant_solution_certificate():
    s = ModelSpace.heisenberg(8, 8, 16)
    tr = evolve(s, np.ones(s.dims), None, 1.0, 0.05, store_every=1)
    hc = harnack_constants(SPEC, 1.0)
    cert = check_harnack_41(tr, None, SPEC, (1, 1, 1), 0.2, (5, 6, 7), 0.9, hc.delta0 * 1.1)
    assert cert.passed and cert.lhs == pytest.approx(1.0)
    assert cert.rhs >= 1.0


def test_delta_must_exceed_delta0():
    s = ModelSpace.heisenberg(8, 8, 16)
    tr = evolve(s, np.ones(s.dims), None, 1.0, 0.05, store_every=1)
    hc = harnack_constants(SPEC, 1.0)
    with pytest.raises(ValueError, match=f"{hc.delta0:.6g}"):
        check_harnack_41(tr, None, SPEC, (1, 1, 1), 0.2, (5, 6, 7), 0.9, hc.delta0)
    with pytest.raises(ValueError):
        check_harnack_41(tr, None, SPEC, (1, 1, 1), 0.9, (5, 6, 7), 0.2, 10.0)


def test_harnack_constants():
    hc = harnack_constants(SPEC, 2.0)
    assert all(c >= 0 for c in hc.c_prime)
    assert hc.alpha_min > 0 and hc.delta0 >= hc.alpha_min
    assert hc.exponent(1.0, 1.0) == 0.0
    with pytest.raises(ScheduleError):
        harnack_constants(ScheduleSpec(ExpFamily(1.0), CDConstants(1, 0.5, 1, 2)), 1.0)


def test_torus_single_mode_certificates():
    s = ModelSpace.torus(16, 16, 4)
    x = s.mesh[0]
    u0 = 1 + 0.5 * np.sin(TAU * x)
    tr = evolve(s, u0, None, 1.0, 1e-3, store_every=50)
    spec = ScheduleSpec(PowerLaw(2.0), CDConstants(0, 1, 0, 2), 0.5, 0.5)
    hc = harnack_constants(spec, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        t1 = float(rng.choice(tr.times[1:-2]))
        t2 = float(rng.choice(tr.times[tr.times >= t1 + 0.05]))
        p = (int(rng.integers(16)), int(rng.integers(16)), 0)
        q = (int(rng.integers(16)), int(rng.integers(16)), 0)
        cert = check_harnack_41(tr, None, spec, p, t1, q, t2, 1.1 * hc.delta0, constants=hc, segments=16)
        assert cert.passed


def test_tightness_probe():
    s = ModelSpace.torus(16, 16, 4)
    u0 = 1 + 0.5 * np.sin(TAU * s.mesh[0])
    base = evolve(s, u0, None, 0.5, 1e-3, store_every=500)
    eps = 1e-5
    ahead = evolve(s, base.states[-1], None, eps, eps, store_every=1)
    tr = Trajectory(s, np.array([0.5, 0.5 + eps]), [ahead.states[0], ahead.states[-1]], eps)
    spec = ScheduleSpec(PowerLaw(2.0), CDConstants(0, 1, 0, 2), 0.5, 0.5)
    hc = harnack_constants(spec, 1.0)
    cert = check_harnack_41(tr, None, spec, (3, 4, 0), 0.5, (3, 4, 0), 0.5 + eps, 1.1 * hc.delta0, constants=hc)
    assert cert.rho_delta == 0.0
    assert abs(cert.lhs / cert.rhs - 1) < 1e-3


def test_certificate_json():
    s = ModelSpace.heisenberg(8, 8, 16)
    tr = evolve(s, np.ones(s.dims), None, 1.0, 0.05, store_every=1)
    hc = harnack_constants(SPEC, 1.0)
    cert = check_harnack_41(tr, None, SPEC, (1, 1, 1), 0.2, (5, 6, 7), 0.9, hc.delta0 * 1.1)
    data = json.loads(cert.to_json())
    for key in ("x", "y", "t1", "t2", "rho_delta", "rhs", "lhs", "passed"):
        assert key in data
    assert data["passed"] == (data["lhs"] <= data["rhs"] * (1 + data["tol"]))


# -- stationary Harnack certificates -------------------------------------------------------------------


def test_stationary_constant_solution():
    """On a compact space a positive solution of L u = V u with V >= 0 is constant and V = 0."""
    s = ModelSpace.heisenberg(8, 8, 16)
    c = CDConstants(1.0, 0.5, 1, 2)
    cert = check_harnack_42(s, np.full(s.dims, 3.0), Potential.zero(s), c, samples=4)
    assert cert.extra["C_star"] == 0.0 and cert.passed
    cert2 = check_harnack_42(s, np.full(s.dims, 6.0), Potential.zero(s), c, samples=4)
    assert cert2.extra["C_star"] == cert.extra["C_star"]


def test_stationary_checks_reject_bad_input():
    s = ModelSpace.heisenberg(8, 8, 16)
    c = CDConstants(1.0, 0.5, 1, 2)
    u = 2 + np.sin(TAU * s.mesh[0])
    with pytest.raises(ValueError, match="stationary"):
        check_harnack_42(s, u, Potential.zero(s), c)
    with pytest.raises(ValueError):
        check_harnack_42(s, np.ones(s.dims), Potential.zero(s), CDConstants(0, 0.5, 1, 2))
    with pytest.raises(ValueError):
        check_harnack_42(s, np.ones(s.dims), Potential.constant(s, 0.5), c)
