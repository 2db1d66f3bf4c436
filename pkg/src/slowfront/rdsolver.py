"""Finite differences for ``u_t = eps Lap u + (f(u(t - eps tau)) - u) / eps``.

Geometries are a line segment ``[-L, L]`` and a radially symmetric ball of
radius ``R_max`` in dimension ``N``. Time stepping treats the stiff ``-u/eps``
decay with an integrating factor:

    u_new = exp(-dt/eps) u + (1 - exp(-dt/eps)) (eps**2 Lap_h u + f(u_delayed))

which is a convex combination of nonnegative-weight stencils under the step
bounds enforced here, so the discrete scheme is itself order preserving.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .nonlinearity import Nonlinearity

RANGE_TOL = 1e-6
GUARD_TOL = 1e-6


class StabilityError(ValueError):
    pass


class RangeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dirichlet:
    value: float = 0.0


@dataclass(frozen=True)
class NeumannZero:
    pass


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform nodes; ``n`` cells, so ``n + 1`` nodes including both ends."""

    geometry: str  # "line" | "radial"
    extent: float
    n: int
    bc: tuple = (Dirichlet(0.0), Dirichlet(0.0))
    dim: int = 1

    def __post_init__(self):
        if self.geometry not in ("line", "radial"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.geometry == "radial":
            if not isinstance(self.bc[0], NeumannZero):
                # symmetry at the origin is not optional
                object.__setattr__(self, "bc", (NeumannZero(), self.bc[1]))
            if self.dim not in (1, 2, 3):
                raise ValueError("radial geometry supports N = 1, 2, 3")
        elif self.dim != 1:
            raise ValueError("line geometry is one-dimensional")

    @property
    def spacing(self) -> float:
        factor = 2.0 if self.geometry == "line" else 1.0
        return self.extent * factor / self.n

    @property
    def nodes(self) -> np.ndarray:
        if self.geometry == "line":
            return np.linspace(-self.extent, self.extent, self.n + 1)
        return np.linspace(0.0, self.extent, self.n + 1)

    @property
    def laplacian_dim(self) -> int:
        return self.dim

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Second-order centred Laplacian (radial form away from the origin).

        Dirichlet nodes get zero; they are reset by :meth:`apply_bc`.
        """
        h2 = self.spacing ** 2
        out = np.empty_like(u)
        out[1:-1] = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / h2
        if self.geometry == "radial" and self.dim > 1:
            i = np.arange(1, self.n)
            out[1:-1] += (self.dim - 1) / (2.0 * i * h2) * (u[2:] - u[:-2])
        left, right = self.bc
        if isinstance(left, NeumannZero):
            scale = self.dim if self.geometry == "radial" else 1
            out[0] = scale * 2.0 * (u[1] - u[0]) / h2
        else:
            out[0] = 0.0
        if isinstance(right, NeumannZero):
            out[-1] = 2.0 * (u[-2] - u[-1]) / h2
        else:
            out[-1] = 0.0
        return out

    def apply_bc(self, u: np.ndarray) -> np.ndarray:
        left, right = self.bc
        if isinstance(left, Dirichlet):
            u[0] = left.value
        if isinstance(right, Dirichlet):
            u[-1] = right.value
        return u

    def describe(self) -> dict:
        def _bc(b):
            return {"type": "dirichlet", "value": b.value} if isinstance(b, Dirichlet) else {"type": "neumann-zero"}
        return {"geometry": self.geometry, "extent": self.extent, "n": self.n, "dim": self.dim,
                "bc": [_bc(b) for b in self.bc]}

    def same_as(self, other: "SpatialGrid") -> bool:
        return self.describe() == other.describe()


def line_grid(L: float, n: int, left: float = 0.0, right: float = 0.0) -> SpatialGrid:
    return SpatialGrid("line", float(L), int(n), (Dirichlet(left), Dirichlet(right)))


def radial_grid(R_max: float, n: int, dim: int, outer: float = 0.0) -> SpatialGrid:
    return SpatialGrid("radial", float(R_max), int(n), (NeumannZero(), Dirichlet(outer)), int(dim))


# --------------------------------------------------------------------------
# history ring


class DelayFieldState:
    """Current field plus the snapshots spanning the last ``eps * tau`` of time.

    Snapshots are stored at uniformly spaced step times. Lookups at arbitrary
    past times use four-point (cubic) Lagrange interpolation in time and
    reduce to the stored snapshot when the time hits a node.
    """

    def __init__(self, grid: SpatialGrid, eps: float, tau: float, dt: float,
                 history: Sequence[np.ndarray], t0: float = 0.0):
        self.grid, self.eps, self.tau, self.dt = grid, eps, tau, dt
        self.delay = eps * tau
        self.current_time = t0
        depth = max(len(history), 4)
        self.ring = deque((np.array(h, dtype=float) for h in history), maxlen=depth)

    @property
    def current(self) -> np.ndarray:
        return self.ring[-1]

    def push(self, u: np.ndarray) -> None:
        self.ring.append(u)
        self.current_time += self.dt

    def at(self, t: float) -> np.ndarray:
        """Field at a past time ``t`` within the stored window."""
        k = len(self.ring) - 1
        back = (self.current_time - t) / self.dt  # steps into the past
        if back < -1e-9 or back > k + 1e-9:
            raise ValueError(f"time {t} outside stored window")
        j = int(round(back))
        if abs(back - j) < 1e-9:
            return self.ring[k - j]
        # nodes at backward offsets i0..i0+3 bracketing `back`
        i0 = min(max(int(np.floor(back)) - 1, 0), k - 3)
        offs = np.arange(i0, i0 + 4, dtype=float)
        out = np.zeros_like(self.current)
        for a, oa in enumerate(offs):
            w = 1.0
            for b, ob in enumerate(offs):
                if a != b:
                    w *= (back - ob) / (oa - ob)
            out += w * self.ring[k - int(oa)]
        return out

    def delayed(self) -> np.ndarray:
        return self.at(self.current_time - self.delay)


# --------------------------------------------------------------------------
# initial data


@dataclass(frozen=True, eq=False)
class InitialData:
    """Delayed initial datum ``phi(theta, x)`` with its lower and upper envelopes.

    ``phi`` is called as ``phi(theta, x)`` with ``theta`` in ``[-tau, 0]``
    (unscaled) and ``x`` a node array.
    """

    phi: Callable
    w0: Callable
    v0: Callable
    omega0: dict  # {"shape": "interval"|"ball", "center": c, "radius": R0}
    peak: float
    margin: float

    def radius_of(self, x):
        return np.abs(np.asarray(x, dtype=float) - self.omega0.get("center", 0.0))


def build_initial_data(omega0: dict, margin: float, peak: float, theta_ramp: float = 0.0) -> InitialData:
    """Initial data satisfying the ordering ``w0 <= phi <= v0``.

    ``w0 = A tanh(1 - (r / R0)**2)`` is positive exactly on ``Omega0`` with
    normal slope ``2A / R0`` at the boundary and height ``peak (1 - margin/R0)``
    at the centre. ``v0`` is a plateau of height ``peak`` ramping linearly to 0
    over ``margin`` inside the boundary. ``phi = (w0+ + v0) / 2``; with
    ``theta_ramp = a`` it becomes ``w0+ + (v0 - w0+) (1/2 + a theta / (2 tau))``.
    """
    R0 = float(omega0["radius"])
    if not 0 < peak < 1:
        raise ValueError("peak must lie in (0, 1)")
    if not 0 < margin < R0:
        raise ValueError("margin must lie in (0, R0)")
    if abs(theta_ramp) >= 1:
        raise ValueError("theta_ramp must lie in (-1, 1)")
    c = float(omega0.get("center", 0.0))
    frac = margin / R0
    amp = peak * (1.0 - frac) / math.tanh(1.0)

    def w0(x):
        r = np.abs(np.asarray(x, dtype=float) - c)
        return amp * np.tanh(1.0 - (r / R0) ** 2)

    def v0(x):
        r = np.abs(np.asarray(x, dtype=float) - c)
        return peak * np.clip((R0 - r) / margin, 0.0, 1.0)

    tau_ref = {"tau": None}

    def phi(theta, x):
        lo = np.maximum(w0(x), 0.0)
        hi = v0(x)
        if theta_ramp == 0.0 or tau_ref["tau"] in (None, 0.0):
            return 0.5 * (lo + hi)
        weight = 0.5 + 0.5 * theta_ramp * theta / tau_ref["tau"]
        return lo + (hi - lo) * weight

    data = InitialData(phi, w0, v0, dict(omega0, shape=omega0.get("shape", "ball")), peak, margin)
    object.__setattr__(data, "_tau_ref", tau_ref)
    return data


@dataclass
class InitialDataReport:
    ordering_margin: float  # min over samples of min(phi - w0, v0 - phi)
    support_ok: bool
    normal_slope: float
    delta: float
    sup_v0: float

    @property
    def passed(self) -> bool:
        return (self.ordering_margin >= 0.0 and self.support_ok and self.normal_slope >= self.delta
                and self.sup_v0 < 1.0)


def check_initial_data(init: InitialData, grid: SpatialGrid, tau: float, n_theta: int = 5) -> InitialDataReport:
    x = grid.nodes
    R0 = float(init.omega0["radius"])
    r = init.radius_of(x)
    if r.max() < R0 + init.margin and grid.geometry == "radial":
        raise ValueError("Omega0 must sit inside the grid with clearance >= margin")
    if grid.geometry == "line":
        c = float(init.omega0.get("center", 0.0))
        if c - R0 - init.margin < -grid.extent or c + R0 + init.margin > grid.extent:
            raise ValueError("Omega0 must sit inside the grid with clearance >= margin")
    set_tau(init, tau)
    w, v = init.w0(x), init.v0(x)
    worst = np.inf
    support = True
    for theta in np.linspace(-tau, 0.0, n_theta):
        p = init.phi(theta, x)
        worst = min(worst, float(np.min(p - w)), float(np.min(v - p)))
        support &= bool(np.all(p[r >= R0] == 0.0))
    h = 1e-6 * R0
    # one-sided slope from the inside at the boundary
    slope = float((init.w0(np.array([R0 - h])) - init.w0(np.array([R0])))[0] / h)
    return InitialDataReport(worst, support and bool(np.all(v[r >= R0] == 0.0)),
                             slope, 0.1 * init.peak / init.margin, float(np.max(v)))


def set_tau(init: InitialData, tau: float) -> None:
    ref = getattr(init, "_tau_ref", None)
    if ref is not None:
        ref["tau"] = tau


# --------------------------------------------------------------------------
# solver


@dataclass
class Numerics:
    """Discretization controls. ``dt=None`` picks the largest admissible step."""

    dt: Optional[float] = None
    safety: float = 1.0  # multiplies the automatic step
    range_check: bool = True
    probes: tuple = ()  # node indices recorded at every step
    guard: bool = True  # outer band must stay within GUARD_TOL of the boundary value
    guard_fraction: float = 0.05


@dataclass(frozen=True, eq=False)
class SnapshotSeries:
    grid: SpatialGrid
    times: np.ndarray
    fields: np.ndarray  # (n_snapshots, n_nodes)
    eps: float
    tau: float
    dt: float
    probe_times: Optional[np.ndarray] = None
    probe_values: Optional[np.ndarray] = None  # (n_steps + 1, n_probes)
    min_value: float = 0.0
    max_value: float = 1.0

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 0.5 * self.dt + 1e-12:
            raise KeyError(f"no snapshot at t={t}")
        return self.fields[i]


def max_stable_dt(grid: SpatialGrid, eps: float) -> float:
    h = grid.spacing
    return min(0.4 * h * h / (2.0 * grid.laplacian_dim * eps), 0.2 * eps)


def solve_scaled(eps: float, f: Nonlinearity, tau: float, init, grid: SpatialGrid, T: float,
                 snapshot_times: Sequence[float], numerics: Optional[Numerics] = None,
                 value_range: Optional[tuple] = (0.0, 1.0)) -> SnapshotSeries:
    """Scaled run with ``eps`` in ``(0, 0.5]``; see :func:`integrate_field`."""
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 0.5]")
    return integrate_field(eps, f, tau, init, grid, T, snapshot_times, numerics, value_range)


def integrate_field(eps: float, f: Nonlinearity, tau: float, init, grid: SpatialGrid, T: float,
                    snapshot_times: Sequence[float], numerics: Optional[Numerics] = None,
                    value_range: Optional[tuple] = (0.0, 1.0)) -> SnapshotSeries:
    """Advance the scaled delayed equation from its delayed initial datum.

    ``init`` is an :class:`InitialData` or any callable ``phi(theta, x)``; the
    history on ``[-eps tau, 0]`` is ``phi(theta / eps, x)``. Snapshots are
    taken at the step nearest to each requested time in ``[0, T]``.
    ``value_range`` is the invariant interval checked at every step (``None``
    disables the check). ``eps = 1`` is the unscaled equation.

    The step is shrunk so that it divides ``eps * tau``; delayed values then
    sit on stored snapshots and no time interpolation error enters.
    """
    if not 0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    numerics = numerics or Numerics()
    dt_max = max_stable_dt(grid, eps)
    if numerics.dt is None:
        dt = dt_max * numerics.safety
    else:
        dt = float(numerics.dt)
        if dt > dt_max * (1 + 1e-12):
            raise StabilityError(f"dt={dt:.3e} exceeds the stability bound {dt_max:.3e}")
    delay = eps * tau
    if delay > 0:
        m = int(math.ceil(delay / dt - 1e-12))
        dt = delay / m
    else:
        m = 0
    n_steps = int(math.ceil(T / dt - 1e-9))
    x = grid.nodes
    phi = init.phi if isinstance(init, InitialData) else init
    if isinstance(init, InitialData):
        set_tau(init, tau)
    hist_times = -delay + dt * np.arange(m + 1) if m > 0 else np.zeros(1)
    history = [grid.apply_bc(np.array(phi(t / eps if eps > 0 else 0.0, x), dtype=float))
               for t in hist_times]
    state = DelayFieldState(grid, eps, tau, dt, history, t0=0.0)

    snap_idx = {}
    for ts in snapshot_times:
        if ts < -1e-12 or ts > T + 1e-12:
            raise ValueError(f"snapshot time {ts} outside [0, T]")
        snap_idx.setdefault(int(round(ts / dt)), []).append(ts)
    snaps_t, snaps_u = [], []

    decay = math.exp(-dt / eps)
    gain = -math.expm1(-dt / eps)
    e2 = eps * eps
    probes = list(numerics.probes)
    probe_vals = np.empty((n_steps + 1, len(probes))) if probes else None
    band = None
    if numerics.guard and isinstance(grid.bc[1], Dirichlet):
        width = max(2, int(numerics.guard_fraction * grid.n))
        band = slice(grid.n + 1 - width, grid.n + 1)
    lo_seen, hi_seen = np.inf, -np.inf

    def record(k, u):
        nonlocal lo_seen, hi_seen
        lo_seen = min(lo_seen, float(u.min()))
        hi_seen = max(hi_seen, float(u.max()))
        if probes:
            probe_vals[k] = u[probes]
        if k in snap_idx:
            snaps_t.append(k * dt)
            snaps_u.append(u.copy())

    record(0, state.current)
    for k in range(1, n_steps + 1):
        u = state.current
        ud = state.ring[-(m + 1)] if m > 0 else u
        new = decay * u + gain * (e2 * grid.laplacian(u) + f(ud))
        grid.apply_bc(new)
        if value_range is not None and numerics.range_check:
            lo, hi = value_range
            if new.min() < lo - RANGE_TOL or new.max() > hi + RANGE_TOL:
                raise RangeError(f"solution left [{lo}, {hi}] at t={k * dt:.6g}: "
                                 f"min={new.min():.3e} max={new.max():.3e}")
        if band is not None and k % 64 == 0:
            gap = float(np.max(np.abs(new[band] - grid.bc[1].value)))
            if gap > GUARD_TOL:
                raise RangeError(f"front reached the outer guard band at t={k * dt:.6g} "
                                 f"(deviation {gap:.3e})")
        state.push(new)
        record(k, new)

    order = np.argsort(snaps_t, kind="stable")
    return SnapshotSeries(grid, np.asarray(snaps_t)[order], np.asarray(snaps_u)[order]
                          if snaps_u else np.empty((0, grid.n + 1)), eps, tau, dt,
                          dt * np.arange(n_steps + 1) if probes else None, probe_vals,
                          lo_seen, hi_seen)


# --------------------------------------------------------------------------
# comparison


COMPARISON_FACTOR = 5.0


@dataclass
class ComparisonReport:
    min_gap: float  # min over snapshots and nodes of (v - u)
    tolerance: float  # discretization tolerance
    where: tuple  # (time, node position) of the worst gap

    @property
    def threshold(self) -> float:
        return COMPARISON_FACTOR * self.tolerance

    @property
    def passed(self) -> bool:
        return self.min_gap >= -self.threshold


def step_doubling_tolerance(run: Callable[[float], SnapshotSeries], dt: float) -> float:
    """Max snapshot change when a run at ``dt`` is repeated at ``dt/2``."""
    a, b = run(dt), run(0.5 * dt)
    if not a.grid.same_as(b.grid) or a.fields.shape != b.fields.shape:
        raise ValueError("step-doubled runs must share grid and snapshots")
    return float(np.max(np.abs(a.fields - b.fields)))


def comparison_check(u_series: SnapshotSeries, v_series: SnapshotSeries,
                     tolerance: float = 2e-7) -> ComparisonReport:
    """Ordering ``u <= v`` across all shared snapshots and nodes.

    Passes iff ``min(v - u) >= -5 * tolerance``; pass a step-doubling estimate
    from :func:`step_doubling_tolerance` as ``tolerance``.
    """
    if not u_series.grid.same_as(v_series.grid):
        raise ValueError("snapshot series live on different grids")
    if u_series.times.shape != v_series.times.shape or not np.allclose(u_series.times, v_series.times):
        raise ValueError("snapshot times differ")
    gap = v_series.fields - u_series.fields
    i, j = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return ComparisonReport(float(gap[i, j]), float(tolerance),
                            (float(u_series.times[i]), float(u_series.x[j])))


def write_snapshots(series: SnapshotSeries, path) -> str:
    """One column per snapshot, times in the header."""
    from .csvio import fmt, write_csv

    header = ["x_or_r"] + [fmt(t) for t in series.times]
    rows = (np.concatenate([[x], series.fields[:, i]]) for i, x in enumerate(series.x))
    return write_csv(path, header, rows)
