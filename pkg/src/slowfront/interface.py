"""Sharp-interface objects: the moving reference front, barriers and metrics.

The reference interface moves with constant normal speed ``c`` from a ball
of radius ``R0`` (or a single point on a line). A cut-off signed distance to
it feeds the sub-solution; the super-solution composes the monostable wave
with the true signed distance to the initial interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .dde import HistorySegment, solve_dde
from .nonlinearity import Nonlinearity
from .rdsolver import SnapshotSeries
from .waves import FrontError, ProfileFit, level_crossing


# --------------------------------------------------------------------------
# reference front and cut-off distance


@dataclass(frozen=True)
class FreeBoundaryRef:
    geometry: str  # "ball" | "line"
    R0: float
    c: float

    def __post_init__(self):
        if self.geometry not in ("ball", "line"):
            raise ValueError(f"unknown geometry {self.geometry!r}")

    def radius(self, t):
        r = self.R0 + self.c * np.asarray(t, dtype=float)
        if self.geometry == "ball" and np.any(r <= 0):
            raise ValueError("reference radius must stay positive")
        return r

    def raw_distance(self, t, x):
        """Signed distance, negative inside."""
        x = np.asarray(x, dtype=float)
        s = np.abs(x) if self.geometry == "ball" else x
        return s - self.radius(t)


# quintic join g(y) = y + 4y^3 - 7y^4 + 3y^5 on [0, 1]: g(1) = 1 and
# g'(0) = 1, g''(0) = 0, g'(1) = g''(1) = 0
def _join(y):
    return y + 4 * y ** 3 - 7 * y ** 4 + 3 * y ** 5


def _join1(y):
    return 1 + 12 * y ** 2 - 28 * y ** 3 + 15 * y ** 4


def _join2(y):
    return 24 * y - 84 * y ** 2 + 60 * y ** 3


@dataclass(frozen=True)
class CutoffDistance:
    """``d = zeta(d_raw)``: identity on ``|s| <= d0``, saturating at ``2 d0``."""

    ref: FreeBoundaryRef
    d0: float
    dim: int = 2

    @classmethod
    def for_ref(cls, ref: FreeBoundaryRef, dim: int = 2) -> "CutoffDistance":
        return cls(ref, 0.2 * ref.R0, dim)

    def zeta(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        y = np.clip((a - self.d0) / self.d0, 0.0, 1.0)
        sign = np.sign(s)
        if order == 0:
            return np.where(a <= self.d0, s, sign * self.d0 * (1.0 + _join(y)))
        if order == 1:
            return np.where(a <= self.d0, 1.0, _join1(y))
        return np.where(a <= self.d0, 0.0, sign * _join2(y) / self.d0)

    def __call__(self, t, x):
        return self.zeta(self.ref.raw_distance(t, x))

    def grad_norm(self, t, x):
        return np.abs(self.zeta(self.ref.raw_distance(t, x), 1))

    def time_derivative(self, t, x):
        return -self.ref.c * self.zeta(self.ref.raw_distance(t, x), 1)

    def laplacian(self, t, x):
        s = self.ref.raw_distance(t, x)
        lap = self.zeta(s, 2)
        if self.ref.geometry == "ball" and self.dim > 1:
            r = np.abs(np.asarray(x, dtype=float))
            with np.errstate(divide="ignore", invalid="ignore"):
                curv = np.where(r > 0, (self.dim - 1) / r, 0.0)
            # zeta' vanishes wherever the curvature term would be singular
            lap = lap + self.zeta(s, 1) * curv
        return lap

    def fitted_nbar(self, t_grid, x_grid) -> float:
        """Smallest ``N`` with ``|d_t + c| <= N |d|`` on the sample."""
        T, X = np.meshgrid(t_grid, x_grid, indexing="ij")
        d = self(T, X)
        lhs = np.abs(self.time_derivative(T, X) + self.ref.c)
        mask = np.abs(d) > 1e-12
        return float(np.max(lhs[mask] / np.abs(d[mask]))) if mask.any() else 0.0


def cutoff_distance_eval(cd: CutoffDistance, t, x):
    return cd(t, x)


# --------------------------------------------------------------------------
# fronts


@dataclass
class InterfaceTrajectory:
    times: np.ndarray
    positions: np.ndarray
    reference: np.ndarray

    @property
    def error(self) -> np.ndarray:
        return self.positions - self.reference


def extract_front(x: np.ndarray, u: np.ndarray, level: float = 0.5) -> float:
    """Unique level crossing along the line or ray."""
    return level_crossing(np.asarray(x), np.asarray(u), level)


def front_trajectory(run: SnapshotSeries, ref: FreeBoundaryRef, t0: float = 0.0,
                     level: float = 0.5) -> InterfaceTrajectory:
    keep = run.times >= t0 - 1e-12
    times = run.times[keep]
    pos = np.array([extract_front(run.x, u, level) for u in run.fields[keep]])
    return InterfaceTrajectory(times, pos, ref.radius(times))


def front_tracking_error(run: SnapshotSeries, c_star: float, R0: float, t0: float,
                         geometry: str = "ball") -> float:
    traj = front_trajectory(run, FreeBoundaryRef(geometry, R0, c_star), t0)
    return float(np.max(np.abs(traj.error)))


def theorem1_metrics(run: SnapshotSeries, c: float, t0: float, side: str, R0: float = 1.0,
                     geometry: str = "ball") -> float:
    """Sup-norm convergence metric for one side of the reference interface.

    ``inside``: sup of ``|1 - u|`` over ``t >= t0`` and the closed region
    ``{d_raw <= 0}``. ``outside``: sup of ``u`` over ``{d_raw > 0}``.
    """
    if side not in ("inside", "outside"):
        raise ValueError("side must be 'inside' or 'outside'")
    if run.times[-1] <= t0:
        raise ValueError("run horizon must exceed t0")
    ref = FreeBoundaryRef(geometry, R0, c)
    worst = 0.0
    for t, u in zip(run.times, run.fields):
        if t < t0 - 1e-12:
            continue
        d = ref.raw_distance(t, run.x)
        sel = d <= 0 if side == "inside" else d > 0
        if sel.any():
            vals = np.abs(1.0 - u[sel]) if side == "inside" else u[sel]
            worst = max(worst, float(vals.max()))
    return worst


# --------------------------------------------------------------------------
# barriers


class InfeasibleShift(ValueError):
    """``sup v0`` reaches the upper state; the homogeneity-factor mode is required."""


def supersolution_shift(U_star: ProfileFit, c_star: float, tau: float, sup_v0: float) -> float:
    """Largest ``h`` with ``sup_v0 <= U*(c* tau + h)``."""
    if sup_v0 >= U_star.limits[0]:
        raise InfeasibleShift("sup v0 = 1: enable the superhomogeneity factor mode")
    return U_star.inverse(sup_v0) - c_star * tau


def build_supersolution(U_star: ProfileFit, c_star: float, h: float, d_at_0: Callable,
                        eps: float) -> Callable:
    """``(t, x) -> U*((d(0, x) - c* t) / eps + h)``, defined for ``t >= -eps tau``."""

    def barrier(t, x):
        return U_star((d_at_0(x) - c_star * t) / eps + h)

    return barrier


@dataclass(frozen=True)
class BarrierParams:
    sigma: float
    beta: float
    L: float
    K: float
    h: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "beta", "L", "K"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.K > 1:
            raise ValueError("K must exceed 1")


def stability_beta(f: Nonlinearity, f_eta: Nonlinearity, tau: float, cap: float = 0.5) -> float:
    """Largest ``beta <= cap`` with ``e^{beta tau} s - 1 + beta <= -beta``.

    ``s`` is the larger absolute slope at the two stable states.
    """
    s = max(abs(float(f.deriv(1.0))), abs(float(f_eta.deriv(-f_eta.eta))))
    g = lambda b: math.exp(b * tau) * s - 1.0 + 2.0 * b
    if g(cap) <= 0:
        return cap
    if g(0.0) >= 0:
        raise ValueError("stable states have no decay margin")
    return brentq(g, 0.0, cap, xtol=1e-14)


def neighborhood_margin(f_eta: Nonlinearity, tau: float, beta: float, cap: float = 0.5, n: int = 200) -> float:
    """Largest ``a`` so slopes near both stable states keep half the decay margin."""
    target = -0.5 * beta

    def ok(a):
        u = np.concatenate([np.linspace(1 - a, 1 + a, n), np.linspace(-f_eta.eta - a, -f_eta.eta + a, n)])
        return np.max(math.exp(beta * tau) * np.abs(f_eta.deriv(u)) - 1.0 + beta) <= target

    a_cap = min(cap, 0.5 * f_eta.eta)
    if ok(a_cap):
        return a_cap
    lo, hi = 0.0, a_cap
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def barrier_recipe(f: Nonlinearity, f_eta: Nonlinearity, tau: float, cd: CutoffDistance,
                   U_eta: ProfileFit, t_window=(0.0, 1.0), slack: float = 1.0) -> BarrierParams:
    """Constants from the sub-solution proof, each at its smallest working order."""
    beta = stability_beta(f, f_eta, tau)
    a = neighborhood_margin(f_eta, tau, beta)
    if a <= 0:
        raise ValueError("no stable neighbourhood")
    sigma = 0.1 * a
    t = np.linspace(*t_window, 41)
    r = np.linspace(0.0, cd.ref.radius(t_window[1]) + 3 * cd.d0, 801)
    T, X = np.meshgrid(t, r, indexing="ij")
    lap = float(np.max(np.abs(cd.laplacian(T, X))))
    L = 10.0 * (1.0 + lap * U_eta.derivative_bound() / (sigma * beta))
    K = 2.0 + math.exp(beta * tau) + slack
    return BarrierParams(sigma, beta, L, K, eta=f_eta.eta)


def build_subsolution(U_eta: ProfileFit, c_eta: float, params: BarrierParams, cd: CutoffDistance,
                      eps: float) -> Callable:
    """``(t, x) -> U_eta((d(t, x) + eps |ln eps| p(t)) / eps) - q(t)``.

    ``p = K + e^{Lt} - E`` and ``q = sigma (beta E + eps L e^{Lt})`` with
    ``E = exp(-beta t / eps)``. The value is returned unclamped.
    """
    if abs(cd.ref.c - c_eta) > 1e-12 * max(1.0, abs(c_eta)):
        raise ValueError("cut-off distance must move with c_eta")
    log = abs(math.log(eps))
    P = params

    def p(t):
        return P.K + np.exp(P.L * t) - np.exp(-P.beta * t / eps)

    def q(t):
        return P.sigma * (P.beta * np.exp(-P.beta * t / eps) + eps * P.L * np.exp(P.L * t))

    def barrier(t, x):
        with np.errstate(over="ignore"):
            arg = (cd(t, x) + eps * log * p(t)) / eps
            return U_eta(arg) - q(t)

    barrier.p, barrier.q = p, q
    return barrier


@dataclass
class BracketReport:
    super_gap: float  # min(super - u)
    sub_gap: float  # min(u - max(0, sub(t - shift)))
    skipped_times: list
    sub_active_fraction: float  # fraction of checked nodes with sub > 0
    sub_active_gap: float = float("inf")  # min(u - sub) over those nodes
    super_tol: float = 1e-4
    sub_tol: float = 1e-3

    @property
    def super_passed(self) -> bool:
        return self.super_gap >= -self.super_tol

    @property
    def sub_passed(self) -> bool:
        return self.sub_gap >= -self.sub_tol

    @property
    def passed(self) -> bool:
        return self.super_passed and self.sub_passed


def verify_bracketing(run: SnapshotSeries, sub: Optional[Callable], sup: Optional[Callable],
                      t_shift_sub: float, super_tol: float = 1e-4, sub_tol: float = 1e-3) -> BracketReport:
    """Order ``max(0, sub(t - shift)) <= u <= super`` on every snapshot.

    Snapshots before the shift are skipped for the sub-solution and listed.
    """
    sg, bg, ag, skipped = np.inf, np.inf, np.inf, []
    active = total = 0
    for t, u in zip(run.times, run.fields):
        if sup is not None:
            sg = min(sg, float(np.min(sup(t, run.x) - u)))
        if sub is None:
            continue
        if t < t_shift_sub:
            skipped.append(float(t))
            continue
        low = np.maximum(0.0, sub(t - t_shift_sub, run.x))
        gap = u - low
        bg = min(bg, float(np.min(gap)))
        on = low > 0
        if on.any():
            ag = min(ag, float(np.min(gap[on])))
        active += int(np.count_nonzero(on))
        total += low.size
    return BracketReport(sg, bg, skipped, active / total if total else 0.0, ag, super_tol, sub_tol)


# --------------------------------------------------------------------------
# generation from below


@dataclass
class GenerationBoundReport:
    min_gap: float
    window: tuple
    n_checked: int
    table_size: int
    center_gap: float = float("nan")  # min over the window at the first node
    center_bound: float = float("nan")  # bound at the first node, last snapshot

    @property
    def passed(self) -> bool:
        return self.min_gap >= 0.0


def dde_table(f_eta: Nonlinearity, tau: float, xi, s_max: float, dt: Optional[float] = None):
    """Rows of ``v(s; xi)`` for constant histories ``xi``; returns (xi, trajectories)."""
    xi = np.asarray(xi, dtype=float)
    # one batched solve: the state is the vector of all table entries
    return xi, solve_dde(f_eta, tau, HistorySegment.constant(tau, xi), s_max, dt)


def generation_lower_bound(run: SnapshotSeries, f_eta: Nonlinearity, w0: Callable, K: float,
                           eps: float, alpha: float, table_size: int = 200,
                           dt: Optional[float] = None) -> GenerationBoundReport:
    """Check ``max(0, v_eta(t/eps; w0(x) - eps K tau - K t)) <= u(t, x)`` early on.

    The DDE is solved once per node of a table of constant initial values.
    Each node's bound is read from the nearest table value at or below its
    own initial value, which is a lower bound because the semiflow is
    monotone in its datum.
    """
    tau = run.tau
    t_end = alpha * eps * abs(math.log(eps))
    keep = (run.times >= 0) & (run.times <= t_end + 1e-12)
    if not keep.any():
        raise ValueError("no snapshots inside the generation window")
    w = w0(run.x)
    lo = float(w.min() - eps * K * tau - K * t_end)
    xi_tab = np.linspace(lo, float(w.max()), table_size)
    if dt is None:
        dt = tau / 32 if tau > 0 else 1e-2
    _, table = dde_table(f_eta, tau, xi_tab, t_end / eps + dt, dt)
    worst, count, center, cb = np.inf, 0, np.inf, np.nan
    for t, u in zip(run.times[keep], run.fields[keep]):
        xi = w - eps * K * tau - K * t
        vals = table(t / eps)  # nondecreasing in xi
        idx = np.clip(np.searchsorted(xi_tab, xi, side="right") - 1, 0, table_size - 1)
        v = vals[idx]
        # below the table range the bound is <= the smallest entry anyway
        v = np.where(xi < xi_tab[0], np.minimum(v, 0.0), v)
        gap = u - np.maximum(0.0, v)
        worst = min(worst, float(gap.min()))
        center, cb = min(center, float(gap[0])), float(v[0])
        count += u.size
    return GenerationBoundReport(worst, (0.0, t_end), count, table_size, center, cb)


def interior_generation_time(run: SnapshotSeries, rho: float, probe: int = 0) -> float:
    """First time the probed node reaches ``1 - eps**rho``.

    ``run`` must have been produced with that node in ``Numerics.probes``.
    """
    if run.probe_values is None:
        raise ValueError("run carries no probe samples")
    thr = 1.0 - run.eps ** rho
    hit = np.flatnonzero(run.probe_values[:, probe] >= thr)
    if hit.size == 0:
        raise ValueError(f"level {thr:.6g} not reached by t={run.probe_times[-1]:.6g}")
    return float(run.probe_times[hit[0]])
