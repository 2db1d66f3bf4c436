import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfront import nonlinearity as nl
from slowfront import rdsolver as rd

STABILITY_ROOT_TAU_HALF = -0.5882237592799596703  # p = 2, see test_dde


def _const(c):
    return lambda theta, x: np.full_like(x, c, dtype=float)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_radial_laplacian_exact_on_quadratic(dim):
    g = rd.radial_grid(2.0, 40, dim)
    r = g.nodes
    lap = g.laplacian(r ** 2)
    # Delta r^2 = 2N, including the regularized origin
    assert np.max(np.abs(lap[:-1] - 2 * dim)) < 1e-10


def test_line_laplacian_exact_on_quadratic():
    g = rd.line_grid(1.0, 50)
    lap = g.laplacian(g.nodes ** 2)
    assert np.max(np.abs(lap[1:-1] - 2.0)) < 1e-10
    assert lap[0] == 0.0 and lap[-1] == 0.0


def test_radial_geometry_forces_symmetry():
    g = rd.SpatialGrid("radial", 1.0, 10, (rd.Dirichlet(0.3), rd.Dirichlet(0.0)), 2)
    assert isinstance(g.bc[0], rd.NeumannZero)
    with pytest.raises(ValueError):
        rd.SpatialGrid("radial", 1.0, 10, dim=4)
    with pytest.raises(ValueError):
        rd.SpatialGrid("line", 1.0, 10, dim=2)
    with pytest.raises(ValueError):
        rd.SpatialGrid("torus", 1.0, 10)


def test_grid_spacing_and_identity():
    assert rd.line_grid(2.0, 8).spacing == 0.5
    assert rd.radial_grid(2.0, 8, 2).spacing == 0.25
    assert rd.line_grid(2.0, 8).same_as(rd.line_grid(2.0, 8))
    assert not rd.line_grid(2.0, 8).same_as(rd.line_grid(2.0, 8, right=1.0))


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_equilibria_persist(f2, c):
    g = rd.radial_grid(2.0, 100, 2, outer=c)
    s = rd.solve_scaled(0.05, f2, 0.5, _const(c), g, 0.5, [0.0, 0.25, 0.5])
    assert np.max(np.abs(s.fields - c)) == 0.0


def test_pure_diffusion_matches_heat_kernel():
    # f(u) = u removes the reaction; u_t = eps u_xx with a sine mode
    eps, T = 0.1, 1.0
    g = rd.line_grid(1.0, 200)
    k = math.pi
    phi = lambda theta, x: np.sin(k * (x + 1.0))
    s = rd.integrate_field(eps, nl.linear(1.0), 0.0, phi, g, T, [T], rd.Numerics(guard=False),
                           value_range=None)
    exact = math.exp(-eps * k * k * T) * np.sin(k * (g.nodes + 1.0))
    assert np.max(np.abs(s.fields[-1] - exact)) < 2e-3


def test_stability_bound_enforced(f2):
    g = rd.radial_grid(2.0, 100, 2)
    dt = rd.max_stable_dt(g, 0.05)
    with pytest.raises(rd.StabilityError):
        rd.solve_scaled(0.05, f2, 0.5, _const(0.0), g, 0.1, [0.1], rd.Numerics(dt=1.5 * dt))
    assert dt == min(0.4 * g.spacing ** 2 / (4 * 0.05), 0.2 * 0.05)


def test_eps_domain(f2):
    g = rd.radial_grid(2.0, 50, 2)
    for eps in (0.0, 0.6):
        with pytest.raises(ValueError):
            rd.solve_scaled(eps, f2, 0.5, _const(0.0), g, 0.1, [0.1])


def test_step_divides_delay(f2):
    g = rd.radial_grid(2.0, 100, 2)
    s = rd.solve_scaled(0.05, f2, 0.5, _const(0.0), g, 0.1, [0.1])
    m = 0.05 * 0.5 / s.dt
    assert abs(m - round(m)) < 1e-9


def test_range_excursion_raises():
    bad = nl.from_callables(lambda u: 1.3 * u + 0.1, lambda u: 1.3 + 0 * u, lambda u: 0 * u)
    g = rd.radial_grid(2.0, 50, 2)
    with pytest.raises(rd.RangeError):
        rd.solve_scaled(0.1, bad, 0.5, _const(0.9), g, 0.5, [0.5], rd.Numerics(guard=False))


def test_guard_band_detects_front(f2):
    g = rd.radial_grid(1.5, 150, 2)
    init = rd.build_initial_data({"shape": "ball", "radius": 1.0}, 0.2, 0.9)
    with pytest.raises(rd.RangeError, match="guard"):
        rd.solve_scaled(0.1, f2, 0.5, init, g, 2.0, [2.0])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), eps=st.floats(0.05, 0.5))
def test_values_stay_in_unit_interval(f2, seed, eps):
    rng = np.random.default_rng(seed)
    g = rd.radial_grid(1.0, 40, 2)
    u0 = rng.uniform(0, 1, g.n + 1)
    u0[-1] = 0.0
    s = rd.solve_scaled(eps, f2, 0.5, lambda th, x: u0, g, 0.3, [0.3], rd.Numerics(guard=False))
    assert s.min_value >= -1e-8 and s.max_value <= 1 + 1e-8


def test_delay_state_interpolation_exact_for_cubics():
    g = rd.line_grid(1.0, 4)
    dt = 0.1
    poly = lambda t: 1 + 2 * t - t ** 2 + 0.5 * t ** 3
    hist = [np.full(5, poly(-0.5 + dt * i)) for i in range(6)]
    state = rd.DelayFieldState(g, 1.0, 0.5, dt, hist)
    for t in (-0.47, -0.31, -0.05, -0.2):
        assert state.at(t) == pytest.approx(np.full(5, poly(t)), abs=1e-12)
    assert np.array_equal(state.at(-0.3), hist[2])
    assert np.array_equal(state.delayed(), hist[0])
    with pytest.raises(ValueError):
        state.at(0.1)


def test_initial_data_contract(ball_data):
    g = rd.radial_grid(4.0, 400, 2)
    rep = rd.check_initial_data(ball_data, g, 0.5)
    assert rep.passed
    assert rep.sup_v0 == pytest.approx(0.9)
    # normal slope 2A / R0 with A = peak (1 - margin / R0) / tanh 1
    assert rep.normal_slope == pytest.approx(2 * 0.9 * 0.8 / math.tanh(1.0), rel=1e-5)
    assert rep.delta == pytest.approx(0.45)


@settings(max_examples=20, deadline=None)
@given(ramp=st.floats(-0.9, 0.9), tau=st.floats(0.1, 2.0))
def test_ramped_initial_data_ordered(ramp, tau):
    init = rd.build_initial_data({"shape": "ball", "radius": 1.0}, 0.2, 0.9, theta_ramp=ramp)
    rep = rd.check_initial_data(init, rd.radial_grid(3.0, 300, 2), tau)
    assert rep.ordering_margin >= 0 and rep.support_ok


@pytest.mark.parametrize("kwargs", [{"peak": 1.0}, {"margin": 1.0}, {"theta_ramp": 1.0}])
def test_initial_data_rejects_bad_parameters(kwargs):
    args = dict(margin=0.2, peak=0.9)
    args.update(kwargs)
    with pytest.raises(ValueError):
        rd.build_initial_data({"shape": "ball", "radius": 1.0}, **args)


def test_initial_data_must_fit_grid(ball_data):
    with pytest.raises(ValueError):
        rd.check_initial_data(ball_data, rd.radial_grid(1.1, 50, 2), 0.5)


def test_interior_approaches_one(ball_run):
    # the centre is within 1e-3 of 1 by t = 0.4 at eps = 0.04
    t, u0 = ball_run.probe_times, ball_run.probe_values[:, 0]
    assert 1 - u0[np.searchsorted(t, 0.4)] < 1e-3
    assert ball_run.fields[-1, 0] > 1 - 1e-5


def test_interior_decay_rate_matches_characteristic_root(ball_run):
    # 1 - u(0, t) ~ exp(lam t / eps) once generation is over
    t, u0 = ball_run.probe_times, ball_run.probe_values[:, 0]
    m = (t >= 0.3) & (t <= 0.8)
    slope = np.polyfit(t[m], np.log(1 - u0[m]), 1)[0] * 0.04
    assert slope == pytest.approx(STABILITY_ROOT_TAU_HALF, rel=0.05)


def _pair_runs(f2, scale, dt=None):
    g = rd.radial_grid(3.0, 240, 2)
    init = rd.build_initial_data({"shape": "ball", "radius": 1.0}, 0.2, 0.9)
    times = np.linspace(0, 0.5, 11)
    lower = lambda th, x: scale * init.phi(th, x)
    a = rd.solve_scaled(0.05, f2, 0.5, lower, g, 0.5, times, rd.Numerics(dt=dt))
    b = rd.solve_scaled(0.05, f2, 0.5, init, g, 0.5, times, rd.Numerics(dt=dt))
    return a, b


def test_comparison_check(f2):
    a, b = _pair_runs(f2, 0.9)
    rep = rd.comparison_check(a, b)
    assert rep.passed and rep.min_gap >= -1e-6
    same = rd.comparison_check(b, b)
    assert same.min_gap == 0.0
    swapped = rd.comparison_check(b, a)
    assert not swapped.passed and swapped.min_gap < -1e-2


def test_step_doubling_tolerance(f2):
    g = rd.radial_grid(3.0, 120, 2)
    init = rd.build_initial_data({"shape": "ball", "radius": 1.0}, 0.2, 0.9)
    run = lambda dt: rd.solve_scaled(0.05, f2, 0.5, init, g, 0.3, [0.1, 0.3], rd.Numerics(dt=dt))
    dt = rd.max_stable_dt(g, 0.05)
    tol = rd.step_doubling_tolerance(run, dt)
    assert 0 < tol < 0.05
    # halving again roughly halves the change (first order in time)
    assert rd.step_doubling_tolerance(run, dt / 2) < 0.7 * tol


def test_comparison_check_rejects_mismatch(f2):
    a, _ = _pair_runs(f2, 0.9)
    g = rd.radial_grid(3.0, 120, 2)
    other = rd.solve_scaled(0.05, f2, 0.5, _const(0.0), g, 0.5, np.linspace(0, 0.5, 11))
    with pytest.raises(ValueError):
        rd.comparison_check(a, other)


def test_write_snapshots(tmp_path, f2):
    g = rd.radial_grid(1.0, 4, 2)
    s = rd.solve_scaled(0.5, f2, 0.5, _const(0.0), g, 0.2, [0.0, 0.2])
    path = rd.write_snapshots(s, tmp_path / "s.csv")
    data = open(path, "rb").read()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert lines[0].split(",")[0] == "x_or_r" and len(lines) == g.n + 2
    assert float(lines[2].split(",")[0]) == pytest.approx(0.25)
