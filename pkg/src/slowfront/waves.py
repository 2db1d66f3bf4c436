"""Travelling-wave speeds: the dispersion minimal speed and measured fronts.

The monostable minimal speed comes from linear determinacy at the unstable
state 0. With ``a = f'(0)`` the linearized wave ansatz ``e^{-lam (x - c t)}``
gives

    Delta(lam, c) = lam**2 - c lam - 1 + a exp(-lam c tau)

and the minimal speed is the double root ``Delta = d Delta / d lam = 0``.
Measured speeds come from long unscaled runs on a line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .nonlinearity import BISTABLE, Nonlinearity
from .rdsolver import Numerics, integrate_field, line_grid

RESIDUAL_TOL = 1e-10
TRANSIENT_FRACTION = 0.4
GUARD_FRACTION = 0.2


class DispersionError(RuntimeError):
    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


class FrontError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# dispersion


@dataclass(frozen=True)
class DispersionSolution:
    c_star: float
    lambda_star: float
    residuals: tuple  # (|Delta|, |d Delta / d lam|)
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return max(self.residuals) <= RESIDUAL_TOL and self.c_star > 0 and self.lambda_star > 0


def _dispersion_system(lam, c, a1, tau):
    """Delta, d_lam Delta and the Jacobian in (lam, c); ``a1 = f'(0) - 1``."""
    x = lam * c * tau
    ex = math.exp(-x)
    a = 1.0 + a1
    # a e^{-x} - 1 written to avoid cancellation when a is close to 1
    F1 = lam * lam - c * lam + a1 * ex + math.expm1(-x)
    F2 = 2.0 * lam - c - a * c * tau * ex
    J = np.array([
        [2.0 * lam - c - a * c * tau * ex, -lam - a * lam * tau * ex],
        [2.0 + a * (c * tau) ** 2 * ex, -1.0 - a * tau * ex + a * c * tau * tau * lam * ex],
    ])
    return np.array([F1, F2]), J


def minimal_speed_dispersion(f_prime_0: float, tau: float, max_iter: int = 200) -> DispersionSolution:
    """Double root of the dispersion relation by damped Newton.

    Starts from the undelayed closed form ``c = 2 sqrt(a - 1)``,
    ``lam = sqrt(a - 1)`` and backtracks on the residual norm while keeping
    both unknowns positive.
    """
    a1 = float(f_prime_0) - 1.0
    if not a1 > 0:
        raise ValueError("f'(0) must exceed 1")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    s = math.sqrt(a1)
    if tau == 0:
        return DispersionSolution(2.0 * s, s, (0.0, 0.0), 0)
    # the small-delay expansion gives a better start than the undelayed root
    z = np.array([s, 2.0 * s / (1.0 + f_prime_0 * tau)])
    scale = np.array([s, s])  # nondimensionalize so tiny speeds converge
    F, J = _dispersion_system(z[0], z[1], a1, tau)
    norm = np.linalg.norm(F)
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise DispersionError("singular Jacobian", tuple(z))
        t = 1.0
        while True:
            trial = z + t * step
            if np.all(trial > 0):
                Ft, Jt = _dispersion_system(trial[0], trial[1], a1, tau)
                if np.linalg.norm(Ft) < norm or t < 1e-10:
                    break
            t *= 0.5
            if t < 1e-12:
                raise DispersionError("line search failed", tuple(z))
        z, F, J, norm = trial, Ft, Jt, np.linalg.norm(Ft)
        if np.all(np.abs(F) <= 1e-3 * RESIDUAL_TOL) or np.all(np.abs(t * step) <= 1e-15 * scale):
            break
    else:
        raise DispersionError("Newton did not converge", tuple(z))
    res = (abs(F[0]), abs(F[1]))
    if max(res) > RESIDUAL_TOL:
        raise DispersionError(f"residuals {res} above tolerance", tuple(z))
    return DispersionSolution(float(z[1]), float(z[0]), res, it)


# --------------------------------------------------------------------------
# measured fronts


@dataclass
class WaveSpeedResult:
    speed: float
    method: str  # "dispersion" | "measured"
    fit_window: tuple = (0.0, 0.0)
    fit_residual: float = 0.0
    level: float = float("nan")
    stderr: float = 0.0
    second_level: float = float("nan")
    second_speed: float = float("nan")
    log_coefficient: float = 0.0
    times: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    final_state: Optional[np.ndarray] = None
    residuals: tuple = ()

    @property
    def level_gap(self) -> float:
        """Relative speed disagreement between the two tracked levels."""
        if not np.isfinite(self.second_speed):
            return 0.0
        return abs(self.second_speed - self.speed) / abs(self.speed)

    @property
    def within_contract(self) -> bool:
        span = self.fit_window[1] - self.fit_window[0]
        return self.fit_residual <= 0.01 * abs(self.speed) * span

    @property
    def tolerance(self) -> float:
        """Speed uncertainty used for ordering checks."""
        return max(3.0 * self.stderr, self.level_gap * abs(self.speed))


def level_crossing(x: np.ndarray, u: np.ndarray, level: float) -> float:
    """Position where a decreasing profile crosses ``level`` (linear interpolation).

    Raises :class:`FrontError` on zero or multiple crossings.
    """
    above = u >= level
    flips = np.flatnonzero(above[:-1] != above[1:])
    if flips.size == 0:
        raise FrontError(f"no crossing of level {level}")
    if flips.size > 1:
        raise FrontError(f"{flips.size} crossings of level {level}")
    i = flips[0]
    w = (u[i] - level) / (u[i] - u[i + 1])
    return float(x[i] + w * (x[i + 1] - x[i]))


def fit_front(times, positions, log_correction: bool):
    """Least-squares fit ``x = c t (+ a ln t) + b``; returns (c, a, rms, stderr)."""
    t = np.asarray(times, dtype=float)
    cols = [t, np.ones_like(t)]
    if log_correction:
        cols.insert(1, np.log(t))
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, positions, rcond=None)
    resid = positions - A @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    dof = max(len(t) - A.shape[1], 1)
    cov = np.linalg.inv(A.T @ A) * (resid @ resid) / dof
    return float(coef[0]), float(coef[1]) if log_correction else 0.0, rms, float(math.sqrt(cov[0, 0]))


def measure_front_speed(f: Nonlinearity, tau: float, L: float = 200.0, nx: int = 1600, T: float = 80.0,
                        level: Optional[float] = None, log_correction: Optional[bool] = None,
                        start: float = -0.7, samples: int = 400) -> WaveSpeedResult:
    """Speed of a front launched from a smoothed step in the unscaled equation.

    ``nx`` is the number of cells on ``[-L, L]``. The step sits at
    ``start * L`` and is smoothed over about ten cells. Positions are
    sampled ``samples`` times; the first 40% of ``[0, T]`` is discarded. For
    monostable fronts the fit includes a ``ln t`` term to absorb the slow
    relaxation of pulled fronts; bistable fronts relax exponentially and use a
    plain line.
    """
    if nx < 800:
        raise ValueError("nx must be at least 800")
    bistable = f.kind == BISTABLE
    right = -f.eta if bistable else 0.0
    if level is None:
        level = 0.5 * (1.0 + right)
    if log_correction is None:
        log_correction = not bistable
    second = 0.5 * (level + 1.0)
    grid = line_grid(L, nx, left=1.0, right=right)
    x = grid.nodes
    h = grid.spacing
    x0 = start * L

    def phi(theta, xx):
        return right + (1.0 - right) * 0.5 * (1.0 - np.tanh((xx - x0) / (5.0 * h)))

    snaps = np.linspace(0.0, T, samples + 1)
    series = integrate_field(1.0, f, tau, phi, grid, T, snaps,
                             Numerics(guard=False), value_range=(right, 1.0))
    pos = np.array([level_crossing(x, u, level) for u in series.fields])
    pos2 = np.array([level_crossing(x, u, second) for u in series.fields])
    guard = (1.0 - GUARD_FRACTION) * L
    if pos.max() > guard:
        raise FrontError(f"front at {pos.max():.3f} entered the boundary guard (|x| > {guard:.3f})")
    keep = series.times >= TRANSIENT_FRACTION * T
    t, p, p2 = series.times[keep], pos[keep], pos2[keep]
    if np.any(np.diff(p) < -h):
        raise FrontError("front position is not monotone; fit rejected")
    c, a, rms, se = fit_front(t, p, log_correction)
    c2, *_ = fit_front(t, p2, log_correction)
    return WaveSpeedResult(c, "measured", (float(t[0]), float(t[-1])), rms, level, se, second, c2,
                           a, series.times, pos, x, series.fields[-1].copy())


def bistable_speed(f_eta: Nonlinearity, tau: float, numerics: Optional[dict] = None) -> WaveSpeedResult:
    """The unique bistable speed ``c_eta``, measured."""
    if f_eta.kind != BISTABLE:
        raise ValueError("bistable_speed needs a bistable extension")
    return measure_front_speed(f_eta, tau, **(numerics or {}))


# --------------------------------------------------------------------------
# profiles


@dataclass
class ProfileFit:
    z: np.ndarray
    U: np.ndarray
    decay_left: Optional[float]
    decay_right: Optional[float]
    limits: tuple
    level: float
    monotonicity: float  # max_i U(z_{i+1}) - U(z_i)

    def __call__(self, s):
        """Profile value with tails continued by the fitted exponentials."""
        s = np.asarray(s, dtype=float)
        out = np.interp(s, self.z, self.U)
        hi, lo = self.limits
        zl, zr = self.z[0], self.z[-1]
        if self.decay_left:
            gap = hi - self.U[0]
            out = np.where(s < zl, hi - gap * np.exp(self.decay_left * np.minimum(s - zl, 0.0)), out)
        if self.decay_right:
            gap = self.U[-1] - lo
            out = np.where(s > zr, lo + gap * np.exp(-self.decay_right * np.maximum(s - zr, 0.0)), out)
        return out

    def derivative_bound(self) -> float:
        return float(np.max(np.abs(np.diff(self.U) / np.diff(self.z))))

    def inverse(self, value: float) -> float:
        """The coordinate where the profile equals ``value`` (tails included)."""
        hi, lo = self.limits
        if not lo < value < hi:
            raise ValueError("value outside the profile range")
        if value > self.U[0]:
            if not self.decay_left:
                raise ValueError("left tail unavailable")
            return float(self.z[0] + math.log((hi - value) / (hi - self.U[0])) / self.decay_left)
        if value < self.U[-1]:
            if not self.decay_right:
                raise ValueError("right tail unavailable")
            return float(self.z[-1] - math.log((value - lo) / (self.U[-1] - lo)) / self.decay_right)
        # U is nonincreasing; interpolate on the reversed arrays
        return float(np.interp(value, self.U[::-1], self.z[::-1]))


def _tail_rate(z, gap, lo=1e-6, hi=1e-2):
    sel = (gap >= lo) & (gap <= hi)
    if sel.sum() < 5:
        return None
    slope = np.polyfit(z[sel], np.log(gap[sel]), 1)[0]
    return float(abs(slope))


def extract_profile(x: np.ndarray, final_state: np.ndarray, speed: float, level: float,
                    limits: Optional[tuple] = None) -> ProfileFit:
    """Recentre the final front so that ``U(0) = level`` and fit both tails.

    ``limits`` defaults to the boundary values of the run. Tail exponents
    are log-linear fits where the distance to the limit lies in
    ``[1e-6, 1e-2]``; ``None`` marks a tail with too few samples.
    """
    U = np.asarray(final_state, dtype=float)
    z = np.asarray(x, dtype=float) - level_crossing(x, U, level)
    if limits is None:
        limits = (float(U[0]), float(U[-1]))
    hi, lo = limits
    left, right = z < 0, z > 0
    dl = _tail_rate(z[left], np.abs(hi - U[left]))
    dr = _tail_rate(z[right], np.abs(U[right] - lo))
    return ProfileFit(z, U, dl, dr, (hi, lo), level, float(np.max(np.diff(U))))


def profile_from_result(result: WaveSpeedResult, limits: Optional[tuple] = None) -> ProfileFit:
    return extract_profile(result.x, result.final_state, result.speed, result.level, limits)


# --------------------------------------------------------------------------
# convergence of bistable speeds


@dataclass
class SpeedTable:
    etas: list
    results: list
    c_star: float
    ordered: bool
    below_c_star: bool
    violations: list = field(default_factory=list)

    def rows(self):
        for eta, r in zip(self.etas, self.results):
            yield (eta, r.speed, r.method, r.fit_residual)
        yield (0.0, self.c_star, "dispersion", 0.0)

    @property
    def passed(self) -> bool:
        return self.ordered and self.below_c_star


def speed_convergence_study(f: Nonlinearity, tau: float, etas: Sequence[float],
                            numerics: Optional[dict] = None, builder=None) -> SpeedTable:
    """Bistable speeds for decreasing ``eta`` against the monostable ``c*``.

    Ordering violations larger than twice the combined speed tolerance are
    flagged.
    """
    from .nonlinearity import build_bistable_extension

    etas = list(etas)
    if not etas or any(not 0 < e <= 1 for e in etas) or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("etas must be strictly decreasing values in (0, 1]")
    builder = builder or build_bistable_extension
    c_star = minimal_speed_dispersion(f.deriv(0.0), tau).c_star
    results = [bistable_speed(builder(f, e), tau, numerics) for e in etas]
    violations = []
    for i in range(1, len(results)):
        a, b = results[i - 1], results[i]
        if a.speed - b.speed > 2.0 * (a.tolerance + b.tolerance):
            violations.append((etas[i - 1], etas[i], a.speed - b.speed))
    below = [r.speed <= c_star + 2.0 * r.tolerance for r in results]
    if not all(below):
        violations += [("c*", e, r.speed - c_star) for e, r, ok in zip(etas, results, below) if not ok]
    return SpeedTable(etas, results, c_star, not any(v[0] != "c*" for v in violations), all(below), violations)
