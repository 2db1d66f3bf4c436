"""Experiment configs, runners, manifests and concurrent sweeps.

A config is a JSON document. Unknown keys are errors at every level and the
canonical serialization (:meth:`ExperimentConfig.to_json`) round-trips
byte-identically. Nothing in the system draws random numbers, so a config
fully determines its outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dde, interface, nonlinearity, rdsolver, waves
from .csvio import write_csv

__version__ = "0.1.0"

OUTPUT_ROOT_ENV = "SLOWFRONT_OUTPUT_ROOT"

KINDS = ("validate", "dde-study", "speed-study", "generation", "theorem1", "barriers", "simulate")
EPS_KINDS = ("generation", "theorem1", "barriers", "simulate", "dde-study")
SPEED_METHODS = ("dispersion", "measure", "both", "sweep")

GEOMETRY_DEFAULTS = {"shape": "ball", "R0": 1.0, "extent": 4.0, "dim": 2, "margin": 0.2, "peak": 0.9}
GRID_DEFAULTS = {"cells_per_eps": 8, "nx": 1600, "L": 200.0, "T": 80.0}
BARRIER_DEFAULTS = {"eta": 0.2, "sigma": None, "beta": None, "L": 1.0, "K": 2.0, "alpha": 2.0}
DDE_DEFAULTS = {"histories": [0.1, 0.5, 0.9], "T": 60.0, "fit_window": [20.0, 50.0],
                "bounds_T": 10.0, "rho": 0.5, "phi": 1.0, "dt_per_tau": 32}
GENERATION_DEFAULTS = {"rho": 1.0, "span": 4.0}


class ConfigError(ValueError):
    pass


def _merge(name, given, defaults):
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{name} must be an object")
    extra = set(given) - set(defaults)
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    out = dict(defaults)
    out.update(given)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    nonlinearity: dict = field(default_factory=lambda: {"kind": "ricker", "p": 2.0})
    tau: float = 0.5
    eps: tuple = ()
    etas: tuple = ()
    geometry: dict = field(default_factory=lambda: dict(GEOMETRY_DEFAULTS))
    grid: dict = field(default_factory=lambda: dict(GRID_DEFAULTS))
    horizon: float = 1.0
    t0: float = 0.3
    snapshots: int = 101
    method: str = "both"
    barrier: dict = field(default_factory=lambda: dict(BARRIER_DEFAULTS))
    dde: dict = field(default_factory=lambda: dict(DDE_DEFAULTS))
    generation: dict = field(default_factory=lambda: dict(GENERATION_DEFAULTS))
    output: str = "out"
    deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        object.__setattr__(self, "geometry", _merge("geometry", self.geometry, GEOMETRY_DEFAULTS))
        object.__setattr__(self, "grid", _merge("grid", self.grid, GRID_DEFAULTS))
        object.__setattr__(self, "barrier", _merge("barrier", self.barrier, BARRIER_DEFAULTS))
        object.__setattr__(self, "dde", _merge("dde", self.dde, DDE_DEFAULTS))
        object.__setattr__(self, "generation", _merge("generation", self.generation, GENERATION_DEFAULTS))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.deterministic is not True:
            raise ConfigError("determinism cannot be switched off")
        if self.tau < 0:
            raise ConfigError("tau must be nonnegative")
        if self.kind in EPS_KINDS and not self.eps:
            raise ConfigError(f"{self.kind} needs a nonempty eps list")
        if any(not 0 < e <= 0.5 for e in self.eps):
            raise ConfigError("eps values must lie in (0, 0.5]")
        if self.etas and (any(not 0 < e <= 1 for e in self.etas)
                          or any(b >= a for a, b in zip(self.etas, self.etas[1:]))):
            raise ConfigError("etas must be strictly decreasing values in (0, 1]")
        if self.method not in SPEED_METHODS:
            raise ConfigError(f"unknown speed method {self.method!r}")
        if self.geometry["shape"] not in ("ball", "line"):
            raise ConfigError("geometry shape must be 'ball' or 'line'")
        if self.horizon <= 0 or self.snapshots < 2:
            raise ConfigError("horizon must be positive and snapshots at least 2")
        if self.grid["nx"] < 800:
            raise ConfigError("nx must be at least 800")
        nonlinearity.from_dict(self.nonlinearity)  # raises on a bad spec

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - names
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    @property
    def digest(self) -> str:
        """SHA-256 of everything that determines the outputs; the output location is excluded."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256((json.dumps(d, indent=2) + "\n").encode()).hexdigest()

    def output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output):
            return os.path.join(root, self.output)
        return self.output


# --------------------------------------------------------------------------
# manifest


@dataclass
class Assertion:
    name: str
    passed: bool
    value: object = None
    detail: str = ""


@dataclass
class RunManifest:
    config_hash: str
    kind: str
    versions: dict
    outputs: list = field(default_factory=list)  # [{"path", "summary"}]
    assertions: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def check(self, name, passed, value=None, detail=""):
        if any(a.name == name for a in self.assertions):
            raise ValueError(f"duplicate assertion {name!r}")
        self.assertions.append(Assertion(name, bool(passed), _plain(value), detail))

    def add_output(self, path, base, **summary):
        self.outputs.append({"path": os.path.relpath(path, base), "summary": _plain(summary)})

    @property
    def passed(self) -> bool:
        return not self.errors and all(a.passed for a in self.assertions)

    def __getitem__(self, name) -> Assertion:
        for a in self.assertions:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary_lines(self):
        for a in self.assertions:
            yield f"{'PASS' if a.passed else 'FAIL'}  {a.name}  {a.value}"
        for e in self.errors:
            yield f"ERROR {e}"


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _versions():
    import scipy

    return {"slowfront": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# --------------------------------------------------------------------------
# shared building blocks


def scaled_grid(cfg: ExperimentConfig, eps: float) -> rdsolver.SpatialGrid:
    g = cfg.geometry
    n = int(round(g["extent"] * cfg.grid["cells_per_eps"] / eps))
    if g["shape"] == "ball":
        return rdsolver.radial_grid(g["extent"], n, int(g["dim"]))
    return rdsolver.line_grid(g["extent"], 2 * n)


def initial_data(cfg: ExperimentConfig) -> rdsolver.InitialData:
    g = cfg.geometry
    return rdsolver.build_initial_data({"shape": g["shape"], "radius": g["R0"], "center": 0.0},
                                       g["margin"], g["peak"])


def snapshot_times(cfg: ExperimentConfig) -> np.ndarray:
    return np.round(np.linspace(0.0, cfg.horizon, cfg.snapshots), 12)


def scaled_run(cfg: ExperimentConfig, f, eps: float, init=None, probes=()) -> rdsolver.SnapshotSeries:
    init = init or initial_data(cfg)
    return rdsolver.solve_scaled(eps, f, cfg.tau, init, scaled_grid(cfg, eps), cfg.horizon,
                                 snapshot_times(cfg), rdsolver.Numerics(probes=tuple(probes)))


def speed_numerics(cfg: ExperimentConfig) -> dict:
    return {"L": cfg.grid["L"], "nx": cfg.grid["nx"], "T": cfg.grid["T"]}


# --------------------------------------------------------------------------
# experiments


def _validate(cfg, f, out, man):
    rep = nonlinearity.validate_monostable(f)
    for a in rep.results:
        man.check(f"monostable {a.name}", a.passed, a.margin)
    rows = [("monostable", 0.0, a.name, a.margin, a.passed) for a in rep.results]
    exts = []
    for eta in cfg.etas:
        try:
            g = nonlinearity.build_bistable_extension(f, eta)
        except nonlinearity.ConstructionError as exc:
            man.check(f"bistable eta={eta} constructed", False, None, str(exc))
            continue
        exts.append(g)
        br = nonlinearity.validate_bistable(g)
        for a in br.results:
            rows.append(("bistable", eta, a.name, a.margin, a.passed))
        man.check(f"bistable eta={eta} axioms", br.passed, min(a.margin for a in br.results))
    for a, b in zip(exts, exts[1:]):
        order = nonlinearity.check_family_order(a, b) if a.eta < b.eta else nonlinearity.check_family_order(b, a)
        man.check(f"family order eta={b.eta} vs {a.eta}", order.passed, order.max_violation)
    path = write_csv(os.path.join(out, "validate.csv"), ["family", "eta", "axiom", "margin", "passed"], rows)
    man.add_output(path, out, n_rows=len(rows))


def _dde_study(cfg, f, out, man):
    opt = cfg.dde
    tau = cfg.tau
    dt = tau / opt["dt_per_tau"] if tau > 0 else 1e-2
    root = dde.decay_rate(f, tau)
    rows = []
    for v0 in opt["histories"]:
        traj = dde.solve_dde(f, tau, dde.HistorySegment.constant(tau, v0), opt["T"], dt)
        slope = dde.fitted_decay_slope(traj, *opt["fit_window"])
        rel = abs(slope - root.lam) / abs(root.lam)
        rows.append((v0, root.lam, slope, rel))
        man.check(f"decay slope phi={v0}", rel <= 0.05, rel)
    path = write_csv(os.path.join(out, "stability.csv"), ["phi", "root", "fitted_slope", "rel_error"], rows)
    man.add_output(path, out, root=root.lam, residual=root.residual)

    f_eta = nonlinearity.build_bistable_extension(f, cfg.barrier["eta"])
    rows = []
    for v0 in opt["histories"]:
        phi = dde.HistorySegment.constant(tau, v0)
        rep = dde.check_derivative_ratio(f_eta, tau, phi, opt["bounds_T"], dt)
        w = dde.solve_variational(f_eta, tau, phi, opt["bounds_T"], dt)
        fd = dde.finite_difference_direction(f_eta, tau, phi, opt["bounds_T"], dt)
        fd_rel = float(np.max(np.abs(fd.values - w.values) / np.abs(w.values)))
        rows.append((v0, rep.lower_margin, rep.upper_margin, rep.ratio_margin, rep.worst_ratio, fd_rel))
        man.check(f"derivative bounds phi={v0}", rep.passed, rep.worst_ratio)
        man.check(f"finite-difference oracle phi={v0}", fd_rel <= 1e-3, fd_rel)
    path = write_csv(os.path.join(out, "derivatives.csv"),
                     ["phi", "lower_margin", "upper_margin", "ratio_margin", "worst_ratio", "fd_rel_error"], rows)
    man.add_output(path, out)

    rows, ratios = [], []
    phi = dde.HistorySegment.constant(tau, opt["phi"])
    for eps in cfg.eps:
        try:
            t = dde.generation_time(f, tau, eps, phi, opt["rho"], dt)
        except (dde.DdeError, ValueError) as exc:
            man.errors.append(f"generation eps={eps}: {exc}")
            continue
        ratios.append(t / abs(math.log(eps)))
        rows.append((eps, t, ratios[-1]))
    path = write_csv(os.path.join(out, "generation_dde.csv"), ["eps", "t_gen", "ratio"], rows)
    man.add_output(path, out)
    if ratios:
        spread = max(ratios) / min(ratios)
        man.check("dde generation spread < 1.6", spread < 1.6, spread)


def _speed_study(cfg, f, out, man):
    tau = cfg.tau
    rows = []
    disp = None
    if cfg.method in ("dispersion", "both", "sweep"):
        disp = waves.minimal_speed_dispersion(f.deriv(0.0), tau)
        rows.append((0.0, disp.c_star, "dispersion", max(disp.residuals)))
        man.check("dispersion residuals <= 1e-10", disp.ok, max(disp.residuals))
    if cfg.method in ("measure", "both"):
        m = waves.measure_front_speed(f, tau, **speed_numerics(cfg))
        rows.append((0.0, m.speed, "measured", m.fit_residual))
        man.check("fit residual within contract", m.within_contract, m.fit_residual)
        man.check("two tracked levels agree within 1%", m.level_gap <= 0.01, m.level_gap)
        if disp is not None:
            rel = abs(m.speed - disp.c_star) / disp.c_star
            man.check("measured vs dispersion within 3%", rel <= 0.03, rel)
    if cfg.method == "sweep":
        if not cfg.etas:
            raise ConfigError("speed sweep needs etas")
        table = waves.speed_convergence_study(f, tau, cfg.etas, speed_numerics(cfg))
        for eta, r in zip(table.etas, table.results):
            rows.append((eta, r.speed, "measured", r.fit_residual))
        man.check("c_eta nondecreasing as eta decreases", table.ordered, [v[2] for v in table.violations])
        man.check("every c_eta <= c* + tolerance", table.below_c_star,
                  max(r.speed - table.c_star for r in table.results))
        last = table.results[-1].speed
        rel = abs(last - table.c_star) / table.c_star
        man.check(f"c_eta at eta={table.etas[-1]} within 10% of c*", rel <= 0.10, rel)
    path = write_csv(os.path.join(out, "speeds.csv"), ["eta", "speed", "method", "residual"], rows)
    man.add_output(path, out, n_rows=len(rows))


def _generation(cfg, f, out, man):
    rho = cfg.generation["rho"]
    rows, ratios = [], []
    for eps in cfg.eps:
        horizon = cfg.generation["span"] * eps * abs(math.log(eps))
        sub = cfg.replace(horizon=horizon, snapshots=2)
        try:
            run = scaled_run(sub, f, eps, probes=(0,))
            t = interface.interior_generation_time(run, rho)
        except Exception as exc:  # recorded, sweep continues
            man.errors.append(f"eps={eps}: {exc}")
            continue
        ratios.append(t / (eps * abs(math.log(eps))))
        rows.append((eps, t, ratios[-1]))
    path = write_csv(os.path.join(out, "generation_pde.csv"), ["eps", "t_gen", "ratio"], rows)
    man.add_output(path, out)
    if ratios:
        spread = max(ratios) / min(ratios)
        man.check("pde generation spread < 3", spread < 3.0, spread)


def _theorem1(cfg, f, out, man):
    c_star = waves.minimal_speed_dispersion(f.deriv(0.0), cfg.tau).c_star
    R0 = cfg.geometry["R0"]
    rows = []
    for eps in cfg.eps:
        try:
            run = scaled_run(cfg, f, eps)
            ins = interface.theorem1_metrics(run, 0.8 * c_star, cfg.t0, "inside", R0)
            outs = interface.theorem1_metrics(run, 1.2 * c_star, cfg.t0, "outside", R0)
            err = interface.front_tracking_error(run, c_star, R0, cfg.t0)
        except Exception as exc:
            man.errors.append(f"eps={eps}: {exc}")
            continue
        rows.append((eps, ins, outs, err))
    path = write_csv(os.path.join(out, "theorem1.csv"),
                     ["eps", "inside_metric", "outside_metric", "front_error"], rows)
    man.add_output(path, out, c_star=c_star)
    if len(rows) == len(cfg.eps):
        order = np.argsort([-r[0] for r in rows])  # decreasing eps
        ins = [rows[i][1] for i in order]
        outs = [rows[i][2] for i in order]
        errs = [rows[i][3] for i in order]
        man.check("inside metric strictly decreasing in eps", strictly_decreasing(ins), ins)
        man.check("outside metric strictly decreasing in eps", strictly_decreasing(outs), outs)
        man.check("front error decreasing in eps", strictly_decreasing(errs), errs)
        ratios = [r[3] / (r[0] * abs(math.log(r[0]))) for r in rows]
        man.check("front error <= 10 eps|ln eps|", max(ratios) <= 10.0, ratios)


def barrier_profiles(cfg, f):
    """Monostable and bistable wave profiles with their speeds."""
    num = speed_numerics(cfg)
    mono = waves.measure_front_speed(f, cfg.tau, **num)
    f_eta = nonlinearity.build_bistable_extension(f, cfg.barrier["eta"])
    bis = waves.bistable_speed(f_eta, cfg.tau, num)
    U_star = waves.profile_from_result(mono, (1.0, 0.0))
    U_eta = waves.profile_from_result(bis, (1.0, -f_eta.eta))
    return f_eta, bis.speed, U_star, U_eta


def barrier_params(cfg, f, f_eta, c_eta, U_eta):
    ref = interface.FreeBoundaryRef("ball", cfg.geometry["R0"], c_eta)
    cd = interface.CutoffDistance.for_ref(ref, int(cfg.geometry["dim"]))
    recipe = interface.barrier_recipe(f, f_eta, cfg.tau, cd, U_eta, (0.0, cfg.horizon))
    b = cfg.barrier
    used = interface.BarrierParams(*(recipe.__dict__[k] if b[k] is None else b[k]
                                     for k in ("sigma", "beta", "L", "K")), eta=f_eta.eta)
    return cd, recipe, used


def _barriers(cfg, f, out, man):
    c_star = waves.minimal_speed_dispersion(f.deriv(0.0), cfg.tau).c_star
    f_eta, c_eta, U_star, U_eta = barrier_profiles(cfg, f)
    cd, recipe, used = barrier_params(cfg, f, f_eta, c_eta, U_eta)
    write_csv(os.path.join(out, "barrier_params.csv"), ["set", "sigma", "beta", "L", "K"],
              [("recipe", recipe.sigma, recipe.beta, recipe.L, recipe.K),
               ("used", used.sigma, used.beta, used.L, used.K)])
    init = initial_data(cfg)
    R0 = cfg.geometry["R0"]
    h = interface.supersolution_shift(U_star, c_star, cfg.tau, init.peak)
    rows = []
    for eps in cfg.eps:
        try:
            run = scaled_run(cfg, f, eps, init)
            sup = interface.build_supersolution(U_star, c_star, h, lambda x: np.abs(x) - R0, eps)
            sub = interface.build_subsolution(U_eta, c_eta, used, cd, eps)
            shift = cfg.barrier["alpha"] * eps * abs(math.log(eps)) + eps * cfg.tau
            rep = interface.verify_bracketing(run, sub, sup, shift)
            # the feasibility of h, re-checked on the profile
            feas = float(U_star(c_star * cfg.tau + h)) - init.peak
        except Exception as exc:
            man.errors.append(f"eps={eps}: {exc}")
            continue
        rows.append((eps, rep.super_gap, rep.sub_gap, rep.sub_active_fraction, rep.sub_active_gap, feas))
        man.check(f"super dominates eps={eps}", rep.super_passed, rep.super_gap)
        man.check(f"sub below eps={eps}", rep.sub_passed, rep.sub_gap)
        man.check(f"sub nontrivial eps={eps}", rep.sub_active_fraction > 0, rep.sub_active_fraction)
        man.check(f"shift feasible eps={eps}", feas >= -1e-12, feas)
    path = write_csv(os.path.join(out, "barriers.csv"),
                     ["eps", "super_gap", "sub_gap", "sub_active_fraction", "sub_active_gap", "shift_margin"], rows)
    man.add_output(path, out, c_star=c_star, c_eta=c_eta, h=h)


def _simulate(cfg, f, out, man):
    for eps in cfg.eps:
        run = scaled_run(cfg, f, eps)
        path = rdsolver.write_snapshots(run, os.path.join(out, f"snapshots_eps{eps:g}.csv"))
        man.add_output(path, out, eps=eps, min=run.min_value, max=run.max_value)
        man.check(f"range eps={eps}", run.min_value >= -1e-8 and run.max_value <= 1 + 1e-8,
                  [run.min_value, run.max_value])


RUNNERS = {"validate": _validate, "dde-study": _dde_study, "speed-study": _speed_study,
           "generation": _generation, "theorem1": _theorem1, "barriers": _barriers,
           "simulate": _simulate}


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Run one experiment; writes its CSVs and ``manifest.json`` to the output dir."""
    out = config.output_dir()
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(config.to_json())
    man = RunManifest(config.digest, config.kind, _versions())
    try:
        f = nonlinearity.from_dict(config.nonlinearity)
        RUNNERS[config.kind](config, f, out, man)
    except Exception as exc:
        man.errors.append(f"{type(exc).__name__}: {exc}")
        man.errors.append(traceback.format_exc(limit=3).splitlines()[-1])
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        fh.write(man.to_json())
    return man


def _check_dirs(configs):
    dirs = [os.path.abspath(c.output_dir()) for c in configs]
    for i, a in enumerate(dirs):
        for b in dirs[i + 1:]:
            if a == b or b.startswith(a + os.sep) or a.startswith(b + os.sep):
                raise ConfigError(f"output directories collide: {a} and {b}")


def sweep(configs, workers: int = 1):
    """Run independent configs, concurrently when ``workers > 1``.

    Returns manifests in input order; results equal serial execution.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("sweep needs at least one config")
    _check_dirs(configs)
    if workers <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_experiment, configs))


def load_sweep(path):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        extra = set(data) - {"runs"}
        if extra or "runs" not in data:
            raise ConfigError("sweep file must be a list or an object with a 'runs' list")
        data = data["runs"]
    return [ExperimentConfig.from_dict(d) for d in data]
