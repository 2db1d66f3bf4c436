"""Acceptance criteria 1-10, each printing a PASS/FAIL line.

Experiments run through the harness from the shipped configs (or small
inline variants), so criterion 10 can rerun exactly the same work and
compare output bytes. Claims that the numerics cannot meet are kept at
full strength and marked strict xfail.
"""

import math
import os
import time

import numpy as np
import pytest

from slowfront import csvio, dde, harness, rdsolver, waves
from slowfront.harness import ExperimentConfig

pytestmark = pytest.mark.slow
CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")
C_STAR = {(2.0, 0.5): 1.1270775511105518458, (2.5, 1.0): 0.95723076208099113993}
STABILITY_ROOT = {0.5: -0.5882237592799596703, 1.0: -0.49606971599348937075}


def _load(name, **changes):
    return ExperimentConfig.load(os.path.join(CONFIG_DIR, name)).replace(**changes)


EXPERIMENTS = {
    "kpp": ExperimentConfig(kind="speed-study", tau=0.0, method="both"),
    "delay_p2": ExperimentConfig(kind="speed-study", tau=0.5, method="both"),
    "delay_p25": ExperimentConfig(kind="speed-study", tau=1.0, nonlinearity={"kind": "ricker", "p": 2.5},
                                  method="both"),
    "delay_p2_fine": ExperimentConfig(kind="speed-study", tau=0.5, method="both", grid={"nx": 3200}),
    "delay_p25_fine": ExperimentConfig(kind="speed-study", tau=1.0, nonlinearity={"kind": "ricker", "p": 2.5},
                                       method="both", grid={"nx": 3200}),
    "speed_sweep": _load("speed_sweep.json"),
    "dde_tau05": _load("dde_study.json"),
    "dde_tau1": _load("dde_study.json", tau=1.0),
    "generation": _load("generation.json"),
    "theorem1": _load("theorem1.json"),
    "barriers": _load("barriers.json"),
}


class Runs:
    """Runs each experiment once per output root and records wall time."""

    def __init__(self, root):
        self.root, self.cache = root, {}

    def get(self, name, root=None):
        root = root or self.root
        key = (name, str(root))
        if key not in self.cache:
            cfg = EXPERIMENTS[name].replace(output=os.path.join(str(root), name))
            t0 = time.perf_counter()
            man = harness.run_experiment(cfg)
            self.cache[key] = (man, cfg.output_dir(), time.perf_counter() - t0)
        return self.cache[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return emit


def _rows(out, name):
    header, rows = csvio.read_csv(os.path.join(out, name))
    return header, rows


def _speed(out, method):
    return [float(r[1]) for r in _rows(out, "speeds.csv")[1] if r[2] == method]


def _assertions(man, prefix):
    return [a for a in man.assertions if a.name.startswith(prefix)]


# 1 -------------------------------------------------------------------------


def test_criterion_1_kpp_anchor(runs, report):
    man, out, secs = runs.get("kpp")
    disp = waves.minimal_speed_dispersion(2.0, 0.0)
    measured = _speed(out, "measured")[0]
    rel = abs(measured - 2.0) / 2.0
    ok = disp.c_star == 2.0 and max(disp.residuals) <= 1e-10 and rel <= 0.03 and secs <= 60 and not man.errors
    report(1, ok, f"c*={disp.c_star!r} measured={measured:.6f} rel={rel:.4f} time={secs:.1f}s")
    assert disp.c_star == 2.0 and max(disp.residuals) <= 1e-10
    assert _speed(out, "dispersion") == [2.0]
    assert rel <= 0.03 and secs <= 60
    assert not man.errors


# 2 -------------------------------------------------------------------------


@pytest.mark.parametrize("key, coarse, fine", [((2.0, 0.5), "delay_p2", "delay_p2_fine"),
                                               ((2.5, 1.0), "delay_p25", "delay_p25_fine")])
def test_criterion_2_delay_dispersion(runs, report, key, coarse, fine):
    mc, oc, sc = runs.get(coarse)
    mf, of, sf = runs.get(fine)
    disp = _speed(oc, "dispersion")[0]
    assert disp == pytest.approx(C_STAR[key], rel=1e-13)
    rc = abs(_speed(oc, "measured")[0] - disp) / disp
    rf = abs(_speed(of, "measured")[0] - disp) / disp
    ok = rc <= 0.03 and rf < rc and sc + sf <= 300
    report(2, ok, f"(p, tau)={key} rel nx=1600: {rc:.4f} nx=3200: {rf:.4f} time={sc + sf:.1f}s")
    assert rc <= 0.03
    assert rf < rc
    assert sc + sf <= 300
    assert not mc.errors and not mf.errors


# 3 -------------------------------------------------------------------------


def _sweep_speeds(out):
    rows = _rows(out, "speeds.csv")[1]
    c_star = [float(r[1]) for r in rows if r[2] == "dispersion"][0]
    table = [(float(r[0]), float(r[1])) for r in rows if r[2] == "measured"]
    return c_star, table


def test_criterion_3_speed_ordering(runs, report):
    man, out, secs = runs.get("speed_sweep")
    c_star, table = _sweep_speeds(out)
    speeds = [c for _, c in table]
    ordered = man["c_eta nondecreasing as eta decreases"].passed
    below = man["every c_eta <= c* + tolerance"].passed
    ok = ordered and below and secs <= 600
    report("3a", ok, f"c_eta={[round(c, 4) for c in speeds]} c*={c_star:.4f} time={secs:.1f}s")
    assert [e for e, _ in table] == [0.4, 0.2, 0.1, 0.05]
    assert all(b >= a for a, b in zip(speeds, speeds[1:]))
    assert ordered and below and secs <= 600


@pytest.mark.xfail(strict=True, reason="bistable speeds approach c* only like 1/ln^2(eta); "
                                       "c_0.05 sits about 43% below c*")
def test_criterion_3_last_speed_within_ten_percent(runs, report):
    man, out, _ = runs.get("speed_sweep")
    c_star, table = _sweep_speeds(out)
    rel = abs(table[-1][1] - c_star) / c_star
    report("3b", rel <= 0.10, f"c_0.05={table[-1][1]:.4f} c*={c_star:.4f} rel gap={rel:.3f} (limit 0.10)")
    assert rel <= 0.10


# 4 -------------------------------------------------------------------------


def test_criterion_4_comparison_principle(report, f2, ball_data):
    t0 = time.perf_counter()
    tau, dt = 0.5, 0.5 / 32
    gaps = {}
    # constant histories
    u = dde.solve_dde(f2, tau, dde.HistorySegment.constant(tau, 0.3), 30.0, dt)
    v = dde.solve_dde(f2, tau, dde.HistorySegment.constant(tau, 0.6), 30.0, dt)
    gaps["dde constant"] = float(np.min(v.values - u.values))
    # histories varying in theta
    lo = dde.HistorySegment.from_function(tau, lambda th: 0.2 + 0.1 * math.sin(6 * th))
    hi = dde.HistorySegment.from_function(tau, lambda th: 0.2 + 0.1 * math.sin(6 * th) + 0.05 * (1 + th / tau))
    assert np.all(hi.values >= lo.values)
    u = dde.solve_dde(f2, tau, lo, 30.0, dt)
    v = dde.solve_dde(f2, tau, hi, 30.0, dt)
    gaps["dde theta-varying"] = float(np.min(v.values - u.values))
    # scaled PDE, phi_u = 0.9 phi_v
    eps = 0.04
    grid = rdsolver.radial_grid(4.0, 800, 2)
    times = np.round(np.linspace(0, 1, 101), 12)

    def pde(init, step=None):
        return rdsolver.solve_scaled(eps, f2, tau, init, grid, 1.0, times, rdsolver.Numerics(dt=step))

    lower = lambda th, x: 0.9 * ball_data.phi(th, x)
    dt_pde = rdsolver.max_stable_dt(grid, eps)
    tol = rdsolver.step_doubling_tolerance(lambda s: pde(ball_data, s), dt_pde)
    rep = rdsolver.comparison_check(pde(lower), pde(ball_data), tol)
    gaps["pde 0.9 phi"] = rep.min_gap
    secs = time.perf_counter() - t0
    ok = min(gaps.values()) >= -1e-6 and rep.passed and secs <= 120
    report(4, ok, f"min gaps={gaps} step-doubling tol={tol:.2e} time={secs:.1f}s")
    assert all(g >= -1e-6 for g in gaps.values())
    assert rep.passed
    assert secs <= 120


# 5, 6 ----------------------------------------------------------------------


@pytest.mark.parametrize("name, tau", [("dde_tau05", 0.5), ("dde_tau1", 1.0)])
def test_criterion_5_dde_stability_rate(runs, report, name, tau):
    man, out, secs = runs.get(name)
    rows = _rows(out, "stability.csv")[1]
    root = float(rows[0][1])
    worst = max(float(r[3]) for r in rows)
    ok = all(a.passed for a in _assertions(man, "decay slope")) and worst <= 0.05 and secs <= 60
    report(5, ok, f"tau={tau} root={root:.10f} worst rel={worst:.2e} time={secs:.1f}s")
    assert root == pytest.approx(STABILITY_ROOT[tau], abs=1e-13)
    assert worst <= 0.05 and len(rows) == 3
    assert secs <= 60


def test_criterion_6_derivative_bounds(runs, report):
    man, out, secs = runs.get("dde_tau05")
    rows = _rows(out, "derivatives.csv")[1]
    bounds = [a.passed for a in _assertions(man, "derivative bounds")]
    fd = max(float(r[5]) for r in rows)
    ok = len(bounds) == 3 and all(bounds) and fd <= 1e-3 and secs <= 60
    report(6, ok, f"bounds={bounds} worst ratio={max(float(r[4]) for r in rows):.3f} "
                  f"fd rel={fd:.2e} time={secs:.1f}s")
    assert len(rows) == 3 and all(bounds)
    assert all(min(float(r[1]), float(r[2]), float(r[3])) >= 0 for r in rows)
    assert fd <= 1e-3 and secs <= 60


# 7 -------------------------------------------------------------------------


def test_criterion_7_generation_scaling(runs, report):
    man_d, out_d, sd = runs.get("dde_tau05")
    man_p, out_p, sp = runs.get("generation")
    dde_ratios = [float(r[2]) for r in _rows(out_d, "generation_dde.csv")[1]]
    pde_rows = _rows(out_p, "generation_pde.csv")[1]
    pde_ratios = [float(r[2]) for r in pde_rows]
    dde_spread = max(dde_ratios) / min(dde_ratios)
    pde_spread = max(pde_ratios) / min(pde_ratios)
    ok = (len(dde_ratios) == 4 and len(pde_ratios) == 4 and dde_spread < 1.6 and pde_spread < 3
          and sd + sp <= 600)
    report(7, ok, f"dde t/|ln eps| spread={dde_spread:.3f} pde t/(eps|ln eps|) spread={pde_spread:.3f} "
                  f"time={sd + sp:.1f}s")
    assert [float(r[0]) for r in pde_rows] == [0.1, 0.05, 0.02, 0.01]
    assert dde_spread < 1.6 and pde_spread < 3.0
    assert not man_p.errors and sd + sp <= 600


# 8 -------------------------------------------------------------------------


def _theorem1_rows(out):
    rows = [[float(v) for v in r] for r in _rows(out, "theorem1.csv")[1]]
    return sorted(rows, key=lambda r: -r[0])


def test_criterion_8_outside_and_front(runs, report):
    man, out, secs = runs.get("theorem1")
    rows = _theorem1_rows(out)
    outs = [r[2] for r in rows]
    errs = [r[3] for r in rows]
    ratios = [r[3] / (r[0] * abs(math.log(r[0]))) for r in rows]
    ok = (harness.strictly_decreasing(outs) and harness.strictly_decreasing(errs)
          and max(ratios) <= 10 and secs <= 1800)
    report("8a", ok, f"outside={['%.3g' % v for v in outs]} front error={['%.3f' % v for v in errs]} "
                     f"error/(eps|ln eps|)={['%.2f' % v for v in ratios]} time={secs:.1f}s")
    assert [r[0] for r in rows] == [0.08, 0.04, 0.02]
    assert harness.strictly_decreasing(outs)
    assert harness.strictly_decreasing(errs)
    assert max(ratios) <= 10 and secs <= 1800


@pytest.mark.xfail(strict=True, reason="the pulled front lags R0 + c* t by about 2.6 eps|ln eps|, so the "
                                       "0.8 c* region still meets the transition layer at these eps")
def test_criterion_8_inside_metric(runs, report):
    man, out, _ = runs.get("theorem1")
    ins = [r[1] for r in _theorem1_rows(out)]
    ok = harness.strictly_decreasing(ins)
    report("8b", ok, f"inside metric (eps 0.08, 0.04, 0.02)={['%.4f' % v for v in ins]}")
    assert ok


# 9 -------------------------------------------------------------------------


def test_criterion_9_barrier_bracketing(runs, report):
    man, out, secs = runs.get("barriers")
    header, rows = _rows(out, "barriers.csv")
    row = dict(zip(header, rows[0]))
    sup, sub = float(row["super_gap"]), float(row["sub_gap"])
    active = float(row["sub_active_fraction"])
    ok = man.passed and sup >= -1e-4 and sub >= -1e-3 and active > 0 and secs <= 300
    report(9, ok, f"eps={row['eps']} super gap={sup:.3g} sub gap={sub:.3g} "
                  f"sub active fraction={active:.3f} time={secs:.1f}s")
    assert float(row["eps"]) == 0.04
    assert sup >= -1e-4 and sub >= -1e-3 and active > 0
    assert man.passed and secs <= 300


# 10 ------------------------------------------------------------------------


def _files(root):
    out = {}
    for d, _, names in os.walk(root):
        for n in names:
            p = os.path.join(d, n)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_criterion_10_determinism(runs, report, tmp_path_factory):
    second = tmp_path_factory.mktemp("rerun")
    differing = []
    for name in EXPERIMENTS:
        _, first_dir, _ = runs.get(name)
        _, again_dir, _ = runs.get(name, second)
        a, b = _files(first_dir), _files(again_dir)
        # config.json holds the output path, which differs by construction
        a.pop("config.json"), b.pop("config.json")
        if a != b:
            differing.append(name)
    # a concurrent sweep reproduces the serial outputs
    third = tmp_path_factory.mktemp("concurrent")
    names = ["kpp", "dde_tau1", "barriers"]
    harness.sweep([EXPERIMENTS[n].replace(output=os.path.join(str(third), n)) for n in names], workers=2)
    for n in names:
        a, b = _files(runs.get(n)[1]), _files(os.path.join(str(third), n))
        a.pop("config.json"), b.pop("config.json")
        if a != b:
            differing.append(f"{n} (sweep)")
    report(10, not differing, f"{len(EXPERIMENTS)} experiments rerun serially, {len(names)} in a "
                              f"2-worker sweep, differing={differing}")
    assert not differing
