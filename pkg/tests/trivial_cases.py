"""Degenerate cases with answers known by direct substitution.

Each case is a zero-argument callable that raises ``AssertionError`` on
failure.  ``test_trivial.py`` runs them one by one and the acceptance suite
runs the whole battery.
"""

import dataclasses
import math

import numpy as np

from subharnack.cd import CDConstants, default_nu_grid, verify_cd
from subharnack.entropy import EntropyParams, entropies, lemma52_check, monotonicity_report
from subharnack.geometry import ModelSpace, apply_L, band_limited_field, gamma, gamma2, gamma2_Z, gamma_Z
from subharnack.harnack import check_harnack_41, check_harnack_42, harnack_constants, rho_delta
from subharnack.heat import Potential, PotentialBounds, evolve, heat_kernel, potential_bounds
from subharnack.schedule import PowerLaw, ScheduleSpec, build_schedule, closed_form_schedule, harnack_margin

CASES: dict = {}

NIL = ModelSpace.heisenberg(12, 12, 24)
TORUS = ModelSpace.torus(12)
SPACES = (NIL, TORUS)
REF = CDConstants(0, 0.5, 1, 2)


def case(fn):
    CASES[fn.__name__] = fn
    return fn


def _ones(space, t_end=1.0, dt=1e-2, every=10, stencil=2):
    tr = evolve(space, np.ones(space.dims), None, t_end, dt, store_every=every, stencil=stencil)
    # the solver keeps u = 1 only up to rounding; the cases are about the exact state
    return dataclasses.replace(tr, states=[np.ones(space.dims) for _ in tr.states])


# -- operators ---------------------------------------------------------------------------------


@case
def constant_is_harmonic():
    for s in SPACES:
        assert np.all(apply_L(s, np.full(s.dims, 3.7)) == 0)


@case
def constant_has_no_gradient():
    for s in SPACES:
        c = np.full(s.dims, -1.25)
        assert np.all(gamma(s, c) == 0)
        assert np.all(gamma2(s, c) == 0) and np.all(gamma2_Z(s, c) == 0)


@case
def z_independent_has_no_vertical_gradient():
    for s in SPACES:
        f = band_limited_field(s, np.random.default_rng(0), max_freq=2, z_independent=True)
        assert np.all(gamma_Z(s, f) == 0)


@case
def constant_has_zero_cd_margin():
    rng = np.random.default_rng(1)
    c = np.full(NIL.dims, 2.0)
    for _ in range(5):
        consts = CDConstants(rng.uniform(-3, 3), rng.uniform(0.1, 4), rng.uniform(0, 2), rng.uniform(1, 9))
        rep = verify_cd(NIL, consts, [c], default_nu_grid(7))
        assert rep.worst_excess == 0.0 and rep.passed


# -- potentials and the heat equation ------------------------------------------------------


@case
def zero_potential_bounds():
    for s in SPACES:
        assert potential_bounds(s, Potential.zero(s)) == PotentialBounds(0.0, 0.0, 0.0)


@case
def constant_potential_bounds():
    for s in SPACES:
        b = potential_bounds(s, Potential.constant(s, 0.8))
        assert (b.gamma1, b.gamma2, b.theta) == (0.0, 0.0, 0.0)


@case
def constant_data_stays_constant():
    for s in SPACES:
        for u in _ones(s, 0.5, 1e-2, 10, 0).states:
            assert np.max(np.abs(u - 1)) < 1e-13


@case
def constant_potential_decays_exponentially():
    for s in SPACES:
        tr = evolve(s, np.ones(s.dims), Potential.constant(s, 0.6), 1.0, 1e-2, store_every=20)
        for t, u in zip(tr.times, tr.states):
            assert np.max(np.abs(u - math.exp(-0.6 * t))) < 1e-13


@case
def heat_kernel_mass():
    s = ModelSpace.heisenberg(16, 16, 32)
    p = heat_kernel(s, (3, 4, 5), 0.3, dt=1e-2)
    assert abs(s.cell_weight * float(np.sum(p)) - 1) < 1e-6


# -- schedules -------------------------------------------------------------------------------------


@case
def zero_k_reduction():
    t = np.geomspace(0.01, 5, 40)
    for rho2, d in ((0.5, 2.0), (1.0, 3.0)):
        spec = ScheduleSpec(PowerLaw(2.0), CDConstants(0, rho2, 0, d), 0.0, 0.0, variant="heat")
        cf = closed_form_schedule(spec, t)
        assert np.allclose(cf.alpha, 1, rtol=1e-14)
        assert np.allclose(cf.b, 2 * rho2 * t / 3, rtol=1e-14)
        assert np.allclose(cf.phi, d / (2 * t), rtol=1e-14)


@case
def constant_solution_margin_is_minus_phi():
    tr = _ones(NIL)
    spec = ScheduleSpec(PowerLaw(2.0), REF, 0.0, 0.0, variant="heat")
    sched = build_schedule(spec, np.geomspace(1e-3, 1.0, 50))
    m = harnack_margin(tr, None, sched)
    _, _, phi = sched(m.times)
    assert np.allclose(m.values, -phi, rtol=1e-12) and np.all(m.values < 0)


# -- Harnack inequalities ------------------------------------------------------------------------


@case
def diagonal_distance_is_zero():
    for s in SPACES:
        assert rho_delta(s, (2, 3, 4), (2, 3, 4), 0.5) == 0.0


@case
def constant_solution_harnack_certificate():
    tr = evolve(NIL, np.ones(NIL.dims), None, 1.0, 0.05, store_every=1)
    spec = ScheduleSpec(PowerLaw(2.0), REF, 0.5, 0.5)
    hc = harnack_constants(spec, 1.0)
    cert = check_harnack_41(tr, None, spec, (1, 1, 1), 0.2, (5, 6, 7), 0.9, 1.1 * hc.delta0, constants=hc)
    assert cert.lhs == 1.0 and cert.rhs >= 1.0 and cert.passed


@case
def harnack_tightness_probe():
    s = ModelSpace.torus(16, 16, 4)
    base = evolve(s, 1 + 0.5 * np.sin(2 * np.pi * s.mesh[0]), None, 0.5, 1e-3, store_every=500)
    eps = 1e-5
    ahead = evolve(s, base.states[-1], None, eps, eps, store_every=1)
    from subharnack.heat import Trajectory

    tr = Trajectory(s, np.array([0.5, 0.5 + eps]), [ahead.states[0], ahead.states[-1]], eps)
    spec = ScheduleSpec(PowerLaw(2.0), CDConstants(0, 1, 0, 2), 0.5, 0.5)
    hc = harnack_constants(spec, 1.0)
    cert = check_harnack_41(tr, None, spec, (3, 4, 0), 0.5, (3, 4, 0), 0.5 + eps, 1.1 * hc.delta0, constants=hc)
    assert abs(cert.lhs / cert.rhs - 1) < 1e-3


@case
def stationary_constant_has_zero_cstar():
    c = CDConstants(1.0, 0.5, 1, 2)
    a = check_harnack_42(NIL, np.full(NIL.dims, 3.0), Potential.zero(NIL), c, samples=4)
    b = check_harnack_42(NIL, np.full(NIL.dims, 6.0), Potential.zero(NIL), c, samples=4)
    assert a.extra["C_star"] == 0.0 and b.extra["C_star"] == a.extra["C_star"]


# -- entropies -------------------------------------------------------------------------------------


@case
def constant_state_entropies():
    p = EntropyParams.default(REF)
    s = entropies(_ones(NIL), p)
    tD, t = p.tau * p.D, s.times
    assert np.all(s.N == 0) and np.all(s.B == 0)
    assert np.allclose(s.N_tilde, -tD / 2 * (np.log(4 * np.pi * t) + 1), rtol=1e-13)
    assert np.allclose(s.W, -tD / 2 * np.log(4 * np.pi * t) - tD, rtol=1e-13)
    assert np.allclose(s.ug_t, -tD / (2 * t), rtol=1e-12)


@case
def zero_k_dimension():
    assert EntropyParams.default(CDConstants(0, 0.7, 0, 3.0)).D == 3.0


@case
def constant_state_lemma52():
    r = lemma52_check(_ones(NIL))
    assert np.max(r.res_N) < 1e-9 and np.max(r.res_B) == 0.0


@case
def constant_state_nash_derivative():
    p = EntropyParams.default(REF)
    s = entropies(_ones(NIL, 1.0, 1e-3, 100), p)
    assert np.allclose(s.dN_tilde, -p.tau * p.D / (2 * s.times), rtol=1e-4) and np.all(s.dN_tilde < 0)


@case
def critical_tau_slack_vanishes():
    tr = _ones(NIL)
    for varsigma in (0.5, 2 / 3, 5 / 6):
        p = EntropyParams(REF, 2 * (REF.k + varsigma) / varsigma, varsigma)
        rep = monotonicity_report(entropies(tr, p))
        assert rep["checks"]["perelman_sharp"]["passed"]


# -- command line ----------------------------------------------------------------------------------


@case
def cli_constant_evolution():
    import json
    import tempfile

    from subharnack.cli import main

    with tempfile.TemporaryDirectory() as out:
        code = main(["evolve", "--out", out, "-q", "--set", "initial.preset=constant", "--set", "space.kind=torus",
                     "--set", "space.dims=[8,8,4]", "--set", "run.t_end=0.2", "--set", "run.dt=1e-2"])
        summary = json.load(open(f"{out}/summary.json"))
    drift = next(a for a in summary["assertions"] if a["name"] == "mass_drift_per_time")
    assert code == 0 and drift["value"] < 1e-8


@case
def cli_rejects_bad_epsilon():
    import contextlib
    import io
    import tempfile

    from subharnack.cli import main

    err = io.StringIO()
    with tempfile.TemporaryDirectory() as out, contextlib.redirect_stderr(err):
        code = main(["schedule", "--out", out, "-q", "--set", "schedule.eps1=1.5"])
    assert code == 2 and "eps1 must lie in (0,1)" in err.getvalue()


def run_all() -> dict:
    """Run every case; map name to ``None`` on success or the error text."""
    out = {}
    for name, fn in CASES.items():
        try:
            fn()
            out[name] = None
        except Exception as exc:  # noqa: BLE001 - report, do not stop the battery
            out[name] = f"{type(exc).__name__}: {exc}"
    return out
