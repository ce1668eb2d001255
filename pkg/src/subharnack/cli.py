"""Scenario-driven command line.

    subharnack <command> [--scenario FILE|PRESET] [--set key=value ...] [--out DIR] [--seed N]

Commands: check-cd, evolve, schedule, liyau, harnack, entropy, all.
Exit status is 0 when every assertion passes, 1 when one fails and 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cd import default_corpus, default_nu_grid, verify_cd
from .entropy import entropies, lemma52_check, monotonicity_report
from .geometry import Kind
from .harnack import check_harnack_41, check_harnack_42, harnack_constants, rho_delta
from .heat import PositivityError, Potential, evolve, stationary_state, write_trajectory
from .scenario import ConfigError, PRESETS, Scenario, load_scenario
from .schedule import (
    PowerLaw,
    ScheduleError,
    ScheduleSpec,
    build_schedule,
    closed_form_schedule,
    harnack_margin,
    lemma31_margin,
)

logger = logging.getLogger("subharnack")

COMMANDS = ("check-cd", "evolve", "schedule", "liyau", "harnack", "entropy", "all")
SUMMARY_SCHEMA = "subharnack-summary"
SUMMARY_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj))


class Pipeline:
    """Runs the stages of one scenario, sharing intermediate results."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.out = sc.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.assertions: list = []
        self.artifacts: list = []
        self._traj = None
        self._cd = None
        self.fmt = set(sc.raw["output"]["formats"])

    # -- bookkeeping ------------------------------------------------------------

    def check(self, name, passed, value=None, limit=None, asserted=True, **detail):
        self.assertions.append({
            "name": name, "passed": bool(passed), "asserted": bool(asserted),
            "value": value, "limit": limit, "detail": detail,
        })
        logger.info("%-28s %s", name, "pass" if passed else ("FAIL" if asserted else "fail (not asserted)"))

    def write_json(self, name, data):
        if "json" in self.fmt:
            p = self.out / name
            p.write_text(json.dumps(data, indent=2, default=_jsonable, allow_nan=True))
            self.artifacts.append(str(p))

    def csv_path(self, name):
        if "csv" not in self.fmt:
            return None
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    # -- shared stages ----------------------------------------------------------

    def trajectory(self):
        if self._traj is None:
            sc, run = self.sc, self.sc.run
            space = sc.space
            log = self._step_log = []

            def record(n, t, u):
                log.append((t, float(np.sum(u)) * space.cell_weight, float(np.min(u))))

            self._traj = evolve(
                space, sc.u0, sc.potential, float(run["t_end"]), float(run["dt"]),
                store_every=int(run["store_every"]), stencil=int(run["stencil"]), scheme=run["scheme"],
                callback=record,
            )
        return self._traj

    def cd_passed(self) -> bool:
        if self._cd is None:
            self.check_cd()
        return self._cd.passed

    # -- commands ---------------------------------------------------------------

    def check_cd(self):
        sc = self.sc
        c = sc.raw["cd"]
        z_ind = c["z_independent"]
        if z_ind is None:
            z_ind = sc.space.kind is Kind.TORUS
        ids, fields = default_corpus(sc.space, int(c["n_random"]), sc.seed, bool(z_ind), int(c["max_freq"]))
        rep = verify_cd(
            sc.space, sc.constants, fields, default_nu_grid(int(c["nu_points"])),
            abs_tol=float(sc.tol["cd_abs"]), disc_coef=float(sc.tol["cd_disc_coef"]), seed=sc.seed, field_ids=ids,
        )
        self._cd = rep
        self.write_json("cd_report.json", rep.as_dict())
        self.check("cd_inequality", rep.passed, rep.worst_excess, 0.0, witness=list(rep.excess_witness))
        return rep

    def evolve(self):
        sc = self.sc
        traj = self.trajectory()
        log = np.array(self._step_log)
        masses = log[:, 1]
        t_end = float(sc.run["t_end"])
        if sc.raw["output"]["trajectory"]:
            p = self.out / "trajectory.bin"
            write_trajectory(p, traj)
            self.artifacts.append(str(p))
        path = self.csv_path("steps.csv")
        if path:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "mass", "min_u"])
                for row in self._step_log:
                    w.writerow([repr(v) for v in row])
        drift = float(np.max(np.abs(masses - masses[0]))) / max(t_end, 1e-300)
        self.check("mass_drift_per_time", drift <= float(sc.tol["mass_drift"]), drift, float(sc.tol["mass_drift"]),
                   asserted=sc.potential.is_zero)
        self.check("positivity", float(log[:, 2].min()) > 0, float(log[:, 2].min()), 0.0)
        return traj

    def schedule(self):
        sc = self.sc
        tol = float(sc.tol["schedule_rel"])
        for tag, spec in (("scenario", sc.schedule), ("heat", sc.schedule_heat)):
            if spec is None:
                continue
            sched = build_schedule(spec, sc.t_grid)
            path = self.csv_path(f"schedule_{tag}.csv")
            if path:
                sched.write_csv(path)
            try:
                ref = closed_form_schedule(spec, sc.t_grid)
            except ScheduleError:
                continue
            b, a, p = sched(sc.t_grid)
            errs = {
                "b": _rel(b, ref.b),
                "alpha": _rel(a, ref.alpha),
                "phi": _rel(p, ref.phi),
            }
            worst = max(errs.values())
            self.check(f"schedule_closed_form_{tag}", worst <= tol, worst, tol, **errs)

    def _schedules(self):
        sc = self.sc
        t_hi = float(sc.run["t_end"]) * 1.01
        grid = np.linspace(min(sc.t_grid[0], 0.01), max(sc.t_grid[-1], t_hi), 64)
        out = [("scenario", build_schedule(sc.schedule, grid))]
        if sc.schedule_heat is not None:
            out.append(("heat", build_schedule(sc.schedule_heat, grid)))
        return out

    def liyau(self):
        sc = self.sc
        certified = self.cd_passed()
        traj = self.trajectory()
        t_range = tuple(float(v) for v in sc.run["t_range"])
        coef = float(sc.tol["liyau_coef"])
        for tag, sched in self._schedules():
            hm = harnack_margin(traj, sc.potential, sched, t_range, coef)
            path = self.csv_path(f"liyau_{tag}.csv")
            if path:
                hm.write_csv(path)
            self.check(f"liyau_F_{tag}", hm.passed and len(hm.times) > 0, hm.worst_excess, 0.0, asserted=certified,
                       times=len(hm.times))
            if traj.stencil >= 2:
                lm = lemma31_margin(traj, sc.potential, sched, t_range, coef)
                path = self.csv_path(f"lemma31_{tag}.csv")
                if path:
                    lm.write_csv(path)
                self.check(f"lemma31_{tag}", lm.passed and len(lm.times) > 0, lm.worst_excess, 0.0, asserted=certified,
                           times=len(lm.times))

    def harnack(self):
        sc = self.sc
        q = sc.raw["queries"]["harnack"]
        traj = self.trajectory()
        spec = sc.schedule
        if not isinstance(spec.family, PowerLaw):
            spec = ScheduleSpec(PowerLaw(2.0), sc.constants, sc.schedule.eps1, sc.schedule.eps2, sc.vbounds,
                                sc.schedule.eta_form, sc.schedule.variant)
        t_lo, t_hi = (float(v) for v in sc.run["t_range"])
        times = [float(traj.times[c]) for c in (traj.centers if traj.stencil else range(len(traj.times)))]
        times = [t for t in times if t_lo - 1e-12 <= t <= t_hi + 1e-12 and t > 0]
        hc = harnack_constants(spec, max(times))
        delta = float(q["delta_factor"]) * hc.delta0
        rng = np.random.default_rng(sc.seed)
        tuples = [(tuple(d["x"]), tuple(d["y"]), float(d["t1"]), float(d["t2"])) for d in q["tuples"]]
        gap = float(q["min_gap"])
        pairs = [(a, b) for a in times for b in times if b - a >= gap - 1e-12]
        dims = sc.space.dims
        for _ in range(int(q["random"]) if pairs else 0):
            t1, t2 = pairs[int(rng.integers(len(pairs)))]
            x = tuple(int(rng.integers(n)) for n in dims)
            y = tuple(int(rng.integers(n)) for n in dims)
            if sc.space.kind is Kind.TORUS:
                y = (y[0], y[1], x[2])
            tuples.append((x, y, t1, t2))
        certs = [check_harnack_41(traj, sc.potential, spec, x, t1, y, t2, delta, float(sc.tol["harnack_rel"]), hc)
                 for x, y, t1, t2 in tuples]
        self.write_json("harnack_certificates.json", [c.as_dict() for c in certs])
        path = self.csv_path("harnack_certificates.csv")
        if path:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "t1", "t2", "rho_delta", "lhs", "rhs", "pass"])
                for c in certs:
                    w.writerow([" ".join(map(str, c.x)), " ".join(map(str, c.y)), repr(c.t1), repr(c.t2),
                                repr(c.rho_delta), repr(c.lhs), repr(c.rhs), int(c.passed)])
        n_fail = sum(not c.passed for c in certs)
        self.check("harnack_41", n_fail == 0 and bool(certs), n_fail, 0, certificates=len(certs), delta=delta)
        if sc.space.kind is Kind.TORUS and sc.potential.is_constant:
            self._rho_analytic()
        if q["stationary"]:
            self._harnack_42(float(q["budget"]))

    def _rho_analytic(self):
        sc = self.sc
        c = float(sc.potential.fields[0].flat[0])
        n_x = sc.space.dims[0]
        worst = 0.0
        for shift, t, delta in ((n_x // 4, 0.5, 2.0), (n_x // 6, 1.0, 3.0), (n_x // 3, 0.25, 1.5)):
            arc = min(shift, n_x - shift) / n_x
            val = rho_delta(sc.space, (0, 0, 0), (shift, 0, 0), t, sc.potential, delta)
            ref = delta * arc**2 / (4 * t) + t * c
            worst = max(worst, abs(val - ref) / ref)
        self.check("rho_delta_analytic", worst <= 0.02, worst, 0.02)

    def _harnack_42(self, budget):
        sc = self.sc
        if sc.constants.rho1 == 0:
            self.check("harnack_42", False, None, None, asserted=False, note="needs rho1 != 0")
            return
        psi, v_eff, lam = stationary_state(sc.space, sc.potential)
        V = Potential.static(sc.space, np.clip(v_eff, 0, None))
        cert = check_harnack_42(sc.space, psi, V, sc.constants, sc.vbounds, budget, seed=sc.seed)
        self.write_json("harnack_42.json", cert.as_dict())
        self.check("harnack_42", cert.passed, cert.extra["C_star"], budget)

    def entropy(self):
        sc = self.sc
        if not sc.potential.is_zero:
            raise ConfigError("'potential': entropy runs need the heat equation (potential preset zero)")
        if not sc.entropy:
            raise ConfigError("'constants': entropies need rho1 >= 0 and a finite d")
        certified = self.cd_passed()
        traj = self.trajectory()
        e = sc.raw["queries"]["entropy"]
        t_lo, t_hi = (float(v) for v in e["t_range"])
        report = []
        for n, params in enumerate(sc.entropy):
            s = entropies(traj, params)
            keep = (s.times >= t_lo - 1e-12) & (s.times <= t_hi + 1e-12)
            s = _slice_series(s, keep)
            path = self.csv_path(f"entropy_{n}.csv")
            if path:
                s.write_csv(path)
            rep = monotonicity_report(s, params, float(sc.tol["mono_rel"]), float(sc.tol["mono_floor_coef"]))
            report.append(rep)
            for name, chk in rep["checks"].items():
                self.check(f"entropy_{n}_{name}", chk["passed"], chk["worst_excess"], 0.0,
                           asserted=chk["asserted"] and certified, varsigma=params.varsigma)
        self.write_json("monotonicity.json", report)
        r = lemma52_check(traj)
        keep = (r.times >= t_lo - 1e-12) & (r.times <= t_hi + 1e-12)
        path = self.csv_path("lemma52.csv")
        if path:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "res_N", "res_B", "spatial_N", "spatial_B", "temporal_N", "temporal_B"])
                for row in zip(r.times, r.res_N, r.res_B, r.spatial_N, r.spatial_B, r.temporal_N, r.temporal_B):
                    w.writerow([repr(float(v)) for v in row])
        worst = float(max(np.max(r.res_N[keep], initial=0.0), np.max(r.res_B[keep], initial=0.0)))
        lim = float(sc.tol["lemma52_abs"])
        self.check("lemma52_residual", worst <= lim, worst, lim,
                   spatial=float(np.max(r.spatial_N[keep], initial=0.0)))

    def run(self, command):
        if command in ("check-cd", "all"):
            self.check_cd()
        if command in ("evolve", "all"):
            self.evolve()
        if command in ("schedule", "all"):
            self.schedule()
        if command in ("liyau", "all"):
            self.liyau()
        if command in ("harnack", "all"):
            self.harnack()
        if command in ("entropy",) or (command == "all" and self.sc.potential.is_zero and self.sc.entropy):
            self.entropy()

    def summary(self, command, elapsed):
        asserted = [a for a in self.assertions if a["asserted"]]
        return {
            "schema": SUMMARY_SCHEMA,
            "version": SUMMARY_VERSION,
            "package_version": __version__,
            "command": command,
            "scenario": self.sc.raw.get("name"),
            "seed": self.sc.seed,
            "passed": all(a["passed"] for a in asserted),
            "assertions": self.assertions,
            "artifacts": self.artifacts,
            "config": self.sc.resolved(),
            "elapsed_seconds": elapsed,
        }


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


def _slice_series(s, keep):
    import dataclasses

    kw = {}
    for f in dataclasses.fields(s):
        v = getattr(s, f.name)
        if isinstance(v, np.ndarray) and v.shape == keep.shape:
            v = v[keep]
        elif f.name == "integrals":
            v = {k: np.asarray(a)[keep] for k, a in v.items()}
        kw[f.name] = v
    return type(s)(**kw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subharnack", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    ap.add_argument("--scenario", help="scenario file (YAML or JSON) or preset: " + ", ".join(PRESETS))
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a scenario value, e.g. schedule.eps1=0.3 (repeatable)")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--seed", type=int, help="random seed (overrides seed)")
    ap.add_argument("-q", "--quiet", action="store_true", help="only print the summary line")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.command not in COMMANDS:
        print(f"error: unknown command '{args.command}' (choose from {', '.join(COMMANDS)})", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        print("error: '--seed' must be nonnegative", file=sys.stderr)
        return 2
    try:
        sc = load_scenario(args.scenario, args.overrides, args.seed, args.out)
        pipe = Pipeline(sc)
        t0 = time.perf_counter()
        pipe.run(args.command)
    except (ConfigError, ScheduleError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except PositivityError as exc:
        print(f"evolution failed: {exc}", file=sys.stderr)
        return 1
    summary = pipe.summary(args.command, time.perf_counter() - t0)
    path = pipe.out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, default=_jsonable))
    n_fail = sum(1 for a in summary["assertions"] if a["asserted"] and not a["passed"])
    print(f"{args.command}: {'pass' if summary['passed'] else 'FAIL'} "
          f"({len(summary['assertions'])} assertions, {n_fail} failed); summary at {path}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
