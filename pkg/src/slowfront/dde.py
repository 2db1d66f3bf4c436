"""Delay ODE ``v'(t) = f(v(t - tau)) - v(t)`` and its variational equations.

Integration is classical RK4 with a step that divides the delay, so
``t - tau`` always lands on a stored node and the half-step lookups use the
cubic Hermite interpolant built from stored values and slopes. Everything is
vectorized over a trailing batch axis, which lets one call integrate many
constant initial data at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .nonlinearity import BISTABLE, Nonlinearity

RANGE_TOL = 1e-9


class DdeError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HistorySegment:
    """A function on ``[-tau, 0]`` given by samples and a cubic spline.

    ``values`` has shape ``(n,)`` or ``(n, batch)``.
    """

    tau: float
    theta: np.ndarray
    values: np.ndarray
    bounds: Optional[tuple] = None
    _spline: object = field(default=None, repr=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("history samples must be finite")
        if self.tau > 0:
            if abs(theta[0] + self.tau) > 1e-12 or abs(theta[-1]) > 1e-12:
                raise ValueError("history grid must cover [-tau, 0] inclusive")
            spline = CubicSpline(theta, values, axis=0)
        else:
            spline = None
        if self.bounds is not None:
            lo, hi = self.bounds
            if values.min() < lo - RANGE_TOL or values.max() > hi + RANGE_TOL:
                raise ValueError(f"history leaves declared range {self.bounds}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spline", spline)

    @classmethod
    def constant(cls, tau, value, n: int = 9, bounds=None) -> "HistorySegment":
        value = np.asarray(value, dtype=float)
        theta = np.linspace(-tau, 0.0, n) if tau > 0 else np.zeros(1)
        values = np.broadcast_to(value, (theta.size,) + value.shape).copy()
        return cls(float(tau), theta, values, bounds)

    @classmethod
    def from_function(cls, tau, fn: Callable, n: int = 65, bounds=None) -> "HistorySegment":
        theta = np.linspace(-tau, 0.0, n) if tau > 0 else np.zeros(1)
        values = np.array([np.asarray(fn(t), dtype=float) for t in theta])
        return cls(float(tau), theta, values, bounds)

    def __call__(self, theta):
        if self._spline is None:
            return self.values[-1]
        return self._spline(theta)

    @property
    def shape(self):
        return self.values.shape[1:]

    def scaled(self, factor: float) -> "HistorySegment":
        return HistorySegment(self.tau, self.theta, factor * self.values)

    def shifted(self, offset) -> "HistorySegment":
        return HistorySegment(self.tau, self.theta, self.values + offset)


@dataclass(frozen=True, eq=False)
class DdeTrajectory:
    """Nodes ``times[i] = i * dt`` for ``t >= 0``; the history lives in ``history``.

    ``values`` and ``slopes`` have shape ``(n_steps + 1, *state_shape)``.
    """

    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    dt: float
    history: Optional[HistorySegment] = None

    def __call__(self, t):
        """Dense output (cubic Hermite on ``t >= 0``, the history spline before)."""
        t = float(t)
        if t < 0:
            if self.history is None:
                raise ValueError("no history attached")
            return self.history(t)
        return _hermite(self.values, self.slopes, self.dt, t)

    @property
    def final(self):
        return self.values[-1]


def _hermite(values, slopes, dt, t):
    n = values.shape[0] - 1
    j = min(int(np.floor(t / dt)), n - 1) if n > 0 else 0
    if n == 0:
        return values[0]
    s = (t - j * dt) / dt
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return (h00 * values[j] + h10 * dt * slopes[j]
            + h01 * values[j + 1] + h11 * dt * slopes[j + 1])


def aligned_step(tau: float, dt: float) -> tuple[float, int]:
    """Largest step ``<= dt`` dividing ``tau``; returns ``(step, steps_per_delay)``."""
    if tau <= 0:
        return float(dt), 0
    m = int(np.ceil(tau / dt - 1e-12))
    return tau / m, m


def integrate_delay_system(G: Callable, tau: float, history: HistorySegment, T: float,
                           dt: float, check: Optional[Callable] = None) -> DdeTrajectory:
    """RK4 for ``y'(t) = G(y(t - tau)) - y(t)`` on ``[0, T]``.

    ``G`` acts elementwise on the state array; the state shape is that of
    ``history(0)``. ``check`` is called on each new state and may raise.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if tau > 0 and dt > tau / 8 + 1e-15:
        raise DdeError(f"dt={dt} too large; need dt <= tau/8 = {tau / 8}")
    step, m = aligned_step(tau, dt)
    n = int(np.ceil(T / step - 1e-9)) if T > 0 else 0
    y0 = np.asarray(history(0.0), dtype=float)
    values = np.empty((n + 1,) + y0.shape)
    slopes = np.empty_like(values)
    values[0] = y0

    if tau == 0:
        rhs = lambda y: G(y) - y
        slopes[0] = rhs(y0)
        for i in range(n):
            y = values[i]
            k1 = slopes[i]
            k2 = rhs(y + 0.5 * step * k1)
            k3 = rhs(y + 0.5 * step * k2)
            k4 = rhs(y + step * k3)
            values[i + 1] = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            slopes[i + 1] = rhs(values[i + 1])
            if check is not None:
                check(values[i + 1], (i + 1) * step)
        return DdeTrajectory(np.arange(n + 1) * step, values, slopes, step, history)

    # delayed values at nodes (j - m) and midpoints (j - m + 1/2), j = 0..n
    hist_nodes = history(-tau + step * np.arange(m + 1))
    hist_mid = history(-tau + step * (np.arange(m) + 0.5))
    gnode = np.empty_like(values)  # G(y(t_j - tau))

    def delayed_node(j):
        return hist_nodes[j] if j <= m else values[j - m]

    def delayed_mid(j):
        # y(t_j + step/2 - tau)
        k = j - m
        if k < 0:
            return hist_mid[j]
        a, b = values[k], values[k + 1]
        sa, sb = slopes[k], slopes[k + 1]
        return 0.5 * (a + b) + 0.125 * step * (sa - sb)

    gnode[0] = G(delayed_node(0))
    slopes[0] = gnode[0] - y0
    for i in range(n):
        y = values[i]
        g_mid = G(delayed_mid(i))
        g_end = G(delayed_node(i + 1)) if i + 1 <= m else None
        if g_end is None:
            # node i+1-m <= i is already known
            g_end = G(values[i + 1 - m])
        k1 = gnode[i] - y
        k2 = g_mid - (y + 0.5 * step * k1)
        k3 = g_mid - (y + 0.5 * step * k2)
        k4 = g_end - (y + step * k3)
        values[i + 1] = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        gnode[i + 1] = g_end
        slopes[i + 1] = g_end - values[i + 1]
        if check is not None:
            check(values[i + 1], (i + 1) * step)
    return DdeTrajectory(np.arange(n + 1) * step, values, slopes, step, history)


def _invariant_range(f: Nonlinearity, phi: HistorySegment):
    lo, hi = float(np.min(phi.values)), float(np.max(phi.values))
    if lo >= 0.0 and hi <= 1.0:
        return 0.0, 1.0
    if f.kind == BISTABLE and lo >= -f.eta and hi <= 1.0:
        return -f.eta, 1.0
    return None


def _range_checker(bounds):
    if bounds is None:
        return None
    lo, hi = bounds

    def check(y, t):
        if y.min() < lo - RANGE_TOL or y.max() > hi + RANGE_TOL:
            raise DdeError(f"trajectory left invariant range [{lo}, {hi}] at t={t:.6g}: "
                           f"min={y.min():.3e}, max={y.max():.3e}")
    return check


def solve_dde(f: Nonlinearity, tau: float, phi: HistorySegment, T: float, dt: float) -> DdeTrajectory:
    """Method-of-steps solution of ``v' = f(v(t - tau)) - v`` with history ``phi``.

    When ``phi`` lies in an invariant interval of ``f`` (``[0, 1]``, or
    ``[-eta, 1]`` for a bistable extension) the trajectory is checked to stay
    there up to ``1e-9`` and :class:`DdeError` is raised otherwise.
    """
    if phi.tau != tau:
        raise ValueError("history segment length differs from tau")
    return integrate_delay_system(f, tau, phi, T, dt, _range_checker(_invariant_range(f, phi)))


# --------------------------------------------------------------------------
# stability of the equilibrium 1


@dataclass
class StabilityRoot:
    lam: float
    residual: float


def characteristic(lam, slope_at_one: float, tau: float):
    return lam + 1.0 - slope_at_one * np.exp(-lam * tau)


def decay_rate(f: Nonlinearity, tau: float) -> StabilityRoot:
    """Dominant real root of ``lam + 1 - f'(1) exp(-lam tau) = 0``."""
    a = float(f.deriv(1.0))
    if not a < 1.0:
        raise ValueError("decay rate requires f'(1) < 1")
    if tau == 0:
        return StabilityRoot(a - 1.0, 0.0)
    lo = -20.0 / max(tau, 1.0)
    grid = np.linspace(lo, 0.0, 401)[:-1]
    vals = characteristic(grid, a, tau)
    # the characteristic function is positive at 0^-; scan from the right
    roots = []
    for i in range(len(grid) - 1, 0, -1):
        if np.sign(vals[i]) != np.sign(vals[i - 1]) or vals[i] == 0:
            roots.append((grid[i - 1], grid[i]))
            break
    if not roots:
        if characteristic(0.0, a, tau) <= 0:
            raise DdeError("no real root bracket: characteristic value at 0 is not positive")
        raise DdeError(f"no sign change of the characteristic function on [{lo}, 0); "
                       f"min={vals.min():.3e}, max={vals.max():.3e}")
    x0, x1 = roots[0]
    lam = brentq(characteristic, x0, x1, args=(a, tau), xtol=1e-15, rtol=1e-15)
    for _ in range(3):
        d = 1.0 + a * tau * np.exp(-lam * tau)
        lam -= characteristic(lam, a, tau) / d
    return StabilityRoot(float(lam), float(abs(characteristic(lam, a, tau))))


def fitted_decay_slope(traj: DdeTrajectory, t0: float, t1: float) -> float:
    """Least-squares slope of ``log|1 - v|`` over ``[t0, t1]``."""
    mask = (traj.times >= t0) & (traj.times <= t1)
    y = np.log(np.abs(1.0 - traj.values[mask]))
    return float(np.polyfit(traj.times[mask], y, 1)[0])


# --------------------------------------------------------------------------
# variational equations


def _variational_system(f: Nonlinearity):
    def G(y):
        v, w, w2 = y[0], y[1], y[2]
        d1 = f.deriv(v)
        return np.stack([f(v), d1 * w, d1 * w2 + f.deriv2(v) * w * w])
    return G


def solve_variational_system(f_eta: Nonlinearity, tau: float, phi0: HistorySegment, T: float,
                             dt: float) -> DdeTrajectory:
    """Joint trajectory of ``(v, w, w2)``: base solution, first and second derivative
    of the semiflow in the direction of the constant history 1.
    """
    ones = np.ones_like(phi0.values)
    hist = HistorySegment(tau, phi0.theta, np.stack([phi0.values, ones, 0.0 * ones], axis=1))
    return integrate_delay_system(_variational_system(f_eta), tau, hist, T, dt)


def _component(traj: DdeTrajectory, k: int) -> DdeTrajectory:
    h = traj.history
    hist = HistorySegment(h.tau, h.theta, h.values[:, k]) if h is not None else None
    return DdeTrajectory(traj.times, traj.values[:, k], traj.slopes[:, k], traj.dt, hist)


def solve_variational(f_eta: Nonlinearity, tau: float, phi0: HistorySegment, T: float,
                      dt: float) -> DdeTrajectory:
    """``w' = f'(v(t - tau)) w(t - tau) - w``, ``w = 1`` on ``[-tau, 0]``."""
    return _component(solve_variational_system(f_eta, tau, phi0, T, dt), 1)


def solve_second_variational(f_eta: Nonlinearity, tau: float, phi0: HistorySegment, T: float,
                             dt: float) -> DdeTrajectory:
    """``w2' = f'(v(t-tau)) w2(t-tau) - w2 + f''(v(t-tau)) w(t-tau)**2``, ``w2 = 0`` initially."""
    return _component(solve_variational_system(f_eta, tau, phi0, T, dt), 2)


@dataclass
class SemiflowBounds:
    """Constants of the exponential bounds on the semiflow derivatives.

    ``exp(-tau) exp(-t) <= w(t) <= m_plus * exp(gamma_plus * t)``,
    ``|w2(t)| <= k2 * exp(mu2 * t)`` and ``|w2| <= k_hat * exp(gamma * t) * w``.
    """

    n_tilde: float
    m_plus: float
    gamma_plus: float
    a_forcing: float
    mu2: float
    k2: float
    k_hat: float
    gamma: float


def semiflow_bounds(f_eta: Nonlinearity, tau: float, grid=None) -> SemiflowBounds:
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 200001)
    n_tilde = max(float(np.max(f_eta.deriv(grid))), 1.0 + 1e-9)
    c2 = float(np.max(np.abs(f_eta.deriv2(grid))))
    gamma_plus = n_tilde - 1.0
    m_plus = np.exp(gamma_plus * tau)
    # |G(t)| <= sup|f''| * w(t - tau)^2 <= A exp(2 gamma+ (t - tau))
    a_forcing = c2 * m_plus ** 2
    # K exp(mu t) is a supersolution once mu > 2 gamma+ and
    # mu >= N exp(-mu tau) - 1 + (A / K) exp(-2 gamma+ tau)
    mu2 = 2.0 * gamma_plus + 1.0
    margin = mu2 + 1.0 - n_tilde * np.exp(-mu2 * tau)
    k2 = a_forcing * np.exp(-2.0 * gamma_plus * tau) / margin
    k2 = max(k2, 1e-300)
    # w >= exp(-tau - t) turns the second bound into a ratio bound
    k_hat = k2 * np.exp(tau)
    gamma = mu2 + 1.0
    return SemiflowBounds(n_tilde, float(m_plus), gamma_plus, a_forcing, mu2, float(k2),
                          float(k_hat), gamma)


@dataclass
class DerivativeReport:
    lower_margin: float  # min over t of w - exp(-tau - t)
    upper_margin: float  # min over t of m_plus exp(gamma+ t) - w
    second_margin: float  # min over t of k2 exp(mu2 t) - |w2|
    ratio_margin: float  # min over t of k_hat exp(gamma t) w - |w2|
    worst_ratio: float  # max over t of |w2| / (k_hat exp(gamma t) w)
    min_w: float
    bounds: SemiflowBounds

    @property
    def passed(self) -> bool:
        return min(self.lower_margin, self.upper_margin, self.second_margin,
                   self.ratio_margin, self.min_w) >= 0.0


def check_derivative_ratio(f_eta: Nonlinearity, tau: float, phi0: HistorySegment, T: float,
                           dt: float) -> DerivativeReport:
    """Evaluate the first/second derivative bounds along a computed trajectory."""
    traj = solve_variational_system(f_eta, tau, phi0, T, dt)
    b = semiflow_bounds(f_eta, tau)
    t = traj.times
    w, w2 = traj.values[:, 1], traj.values[:, 2]
    # compare in log space where exponentials overflow
    lower = w - np.exp(-tau - t)
    upper = b.m_plus * np.exp(b.gamma_plus * t) - w
    second = b.k2 * np.exp(b.mu2 * t) - np.abs(w2)
    envelope = b.k_hat * np.exp(b.gamma * t) * w
    ratio = np.abs(w2) / envelope
    return DerivativeReport(float(lower.min()), float(upper.min()), float(second.min()),
                            float((envelope - np.abs(w2)).min()), float(ratio.max()),
                            float(w.min()), b)


def finite_difference_direction(f_eta: Nonlinearity, tau: float, phi0: HistorySegment, T: float,
                                dt: float, h: float = 1e-5) -> DdeTrajectory:
    """``[v(t; phi0 + h) - v(t; phi0)] / h`` from two independent solves."""
    base = integrate_delay_system(f_eta, tau, phi0, T, dt)
    bumped = integrate_delay_system(f_eta, tau, phi0.shifted(h), T, dt)
    return DdeTrajectory(base.times, (bumped.values - base.values) / h,
                         (bumped.slopes - base.slopes) / h, base.dt)


# --------------------------------------------------------------------------
# generation time


def generation_time(f: Nonlinearity, tau: float, eps: float, phi: HistorySegment, rho: float,
                    dt: Optional[float] = None, horizon: float = 400.0) -> float:
    """First DDE time ``t*`` with ``v >= 1 - eps**rho`` on all of ``[t* - tau, t*]``.

    The initial datum is ``eps |ln eps| phi``. Multiply by ``eps`` for the time
    of the scaled reaction-diffusion equation.
    """
    if not 0 < eps <= 0.2:
        raise ValueError("eps must lie in (0, 0.2]")
    if rho <= 0:
        raise ValueError("rho must be positive")
    if np.min(phi.values) < 0 or np.max(phi.values) <= 0:
        raise ValueError("phi must be nonnegative and not identically zero")
    if dt is None:
        dt = tau / 32 if tau > 0 else 0.01
    thr = 1.0 - eps ** rho
    traj = solve_dde(f, tau, phi.scaled(eps * abs(np.log(eps))), horizon, dt)
    wmin = _trailing_min(traj.values, int(round(tau / traj.dt)) if tau > 0 else 0)
    hit = np.nonzero(wmin >= thr)[0]
    if hit.size == 0:
        tail = traj.values[-5:]
        raise DdeError(f"threshold {thr:.6g} not reached by t={traj.times[-1]:.6g}; tail={tail}")
    i = int(hit[0])
    if i == 0:
        return 0.0

    def cond(t):
        pts = np.concatenate([[t - tau, t], traj.times[(traj.times > t - tau) & (traj.times < t)]])
        vals = [traj(s) for s in pts] if tau > 0 else [traj(t)]
        return min(float(np.min(v)) for v in vals) - thr

    a, b = traj.times[i - 1], traj.times[i]
    if cond(a) >= 0:
        return float(a)
    for _ in range(60):
        mid = 0.5 * (a + b)
        if cond(mid) >= 0:
            b = mid
        else:
            a = mid
    return float(b)


def _trailing_min(v: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return v.copy()
    out = np.full(v.shape[0], -np.inf)
    out[m:] = sliding_window_view(v, m + 1).min(axis=-1)
    return out
