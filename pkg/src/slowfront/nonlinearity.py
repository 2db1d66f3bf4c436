"""Reaction nonlinearities: normalized monostable maps and their bistable extensions.

A :class:`Nonlinearity` bundles a map together with its first two derivatives.
All evaluators accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special as sp
from scipy.interpolate import CubicSpline

ArrayFn = Callable[[np.ndarray], np.ndarray]

MONOSTABLE = "monostable"
BISTABLE = "bistable-extension"

FD_STEP = 1e-5
FD_TOL = 1e-6
ALGEBRAIC_TOL = 1e-12


class ConstructionError(ValueError):
    """Raised when a bistable extension cannot meet its shape constraints."""


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    kind: str
    fn: ArrayFn
    deriv: ArrayFn
    deriv2: ArrayFn
    params: dict = field(default_factory=dict)
    eta: Optional[float] = None
    fixed_points: tuple = (0.0, 1.0)
    parent: Optional["Nonlinearity"] = None
    knots: tuple = ()  # points where pieces are only C2-joined

    def __call__(self, u):
        return self.fn(u)

    def to_dict(self) -> dict:
        """Key-value description sufficient to rebuild the map with :func:`from_dict`."""
        if "kind" not in self.params:
            raise ValueError("nonlinearity built from raw callables is not serializable")
        return dict(self.params)


def ricker_normalized(p: float) -> Nonlinearity:
    """Ricker map ``p v exp(-v)`` rescaled so its positive fixed point sits at 1.

    With ``l = ln p`` the rescaled map is ``u -> f(l u) / l = p u exp(-l u)``.
    Valid monostable parameters are ``1 < p < e``.
    """
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"Ricker slope p={p} violates the lower bound p > 1")
    if not p < np.e:
        raise ValueError(f"Ricker slope p={p} violates the upper bound p < e")
    lp = np.log(p)

    def fn(u):
        u = np.asarray(u, dtype=float)
        return p * u * np.exp(-lp * u)

    def deriv(u):
        u = np.asarray(u, dtype=float)
        return p * np.exp(-lp * u) * (1.0 - lp * u)

    def deriv2(u):
        u = np.asarray(u, dtype=float)
        return p * lp * np.exp(-lp * u) * (lp * u - 2.0)

    return Nonlinearity(MONOSTABLE, fn, deriv, deriv2, params={"kind": "ricker", "p": p})


def tabulated(u_nodes, values, kind: str = MONOSTABLE) -> Nonlinearity:
    """User-supplied nonlinearity from samples, interpolated by a C2 cubic spline."""
    u_nodes = np.asarray(u_nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    spline = CubicSpline(u_nodes, values)
    d1, d2 = spline.derivative(1), spline.derivative(2)
    params = {"kind": "tabulated", "u": u_nodes.tolist(), "f": values.tolist()}
    return Nonlinearity(
        kind,
        lambda u: spline(np.asarray(u, dtype=float)),
        lambda u: d1(np.asarray(u, dtype=float)),
        lambda u: d2(np.asarray(u, dtype=float)),
        params=params,
    )


def linear(slope: float, kind: str = MONOSTABLE) -> Nonlinearity:
    """``u -> slope * u``; handy as a closed-form test case."""
    a = float(slope)
    return Nonlinearity(
        kind,
        lambda u: a * np.asarray(u, dtype=float),
        lambda u: np.full_like(np.asarray(u, dtype=float), a),
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        params={"kind": "linear", "slope": a},
    )


def from_callables(fn, deriv, deriv2, kind: str = MONOSTABLE, **params) -> Nonlinearity:
    return Nonlinearity(kind, fn, deriv, deriv2, params=params)


# --------------------------------------------------------------------------
# validation


@dataclass
class AxiomResult:
    name: str
    margin: float  # worst value of the quantity required to be > 0 (or >= 0)
    passed: bool


@dataclass
class ValidationReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> AxiomResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def format(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [
            f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  margin={r.margin: .6e}"
            for r in self.results
        ]
        return "\n".join(lines)


def _interior_grid(a: float, b: float, n: int) -> np.ndarray:
    # endpoints excluded: strict inequalities degenerate there
    return np.linspace(a, b, n + 2)[1:-1]


def fd_derivative_error(f: Nonlinearity, u, step: float = FD_STEP) -> float:
    """Worst disagreement between centered differences and the closed-form derivatives.

    The first derivative is compared in absolute terms, the second relative to
    ``max(1, |f''|)``.
    """
    u = np.asarray(u, dtype=float)
    d1 = (f(u + step) - f(u - step)) / (2 * step)
    d2 = (f.deriv(u + step) - f.deriv(u - step)) / (2 * step)
    e1 = np.max(np.abs(d1 - f.deriv(u)))
    f2 = f.deriv2(u)
    e2 = np.max(np.abs(d2 - f2) / np.maximum(1.0, np.abs(f2)))
    return float(max(e1, e2))


def validate_monostable(f: Nonlinearity, n_samples: int = 1000) -> ValidationReport:
    """Check the monostable axioms on a uniform interior grid of ``(0, 1)``.

    Failing axioms are reported, never raised.
    """
    if f.kind != MONOSTABLE:
        raise ValueError("validate_monostable expects a monostable nonlinearity")
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    u = _interior_grid(0.0, 1.0, n_samples)
    f0 = float(f(0.0))
    f1 = float(f(1.0))
    d0 = float(f.deriv(0.0))
    d1 = float(f.deriv(1.0))
    res = [
        AxiomResult("f(0)=0", -abs(f0), abs(f0) <= ALGEBRAIC_TOL),
        AxiomResult("f(1)=1", -abs(f1 - 1.0), abs(f1 - 1.0) <= ALGEBRAIC_TOL),
        AxiomResult("f'(0)>1", d0 - 1.0, d0 > 1.0),
        AxiomResult("f'(1)<1", 1.0 - d1, d1 < 1.0),
    ]
    m = float(np.min(f.deriv(u)))
    res.append(AxiomResult("f'(u)>0", m, m > 0.0))
    m = float(np.min(f(u) - u))
    res.append(AxiomResult("f(u)>u", m, m > 0.0))
    err = fd_derivative_error(f, u)
    res.append(AxiomResult("derivative consistency", FD_TOL - err, err <= FD_TOL))
    return ValidationReport(res)


# --------------------------------------------------------------------------
# bistable extension


def default_patch_slope(f: Nonlinearity) -> float:
    return min(0.5, float(f.deriv(0.0)) / 2.0)


def _smoothstep(x):
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def _smoothstep1(x):
    return 30.0 * x * x * (1.0 - x) ** 2


def _smoothstep2(x):
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)


class _NegativePatch:
    """C2 increasing map on ``[-eta, 0]`` joining ``(-eta, -eta)`` to ``(0, 0)``.

    ``P(u) = eta * G(u / eta) + k/2 * u**2 * beta(u / eta)``. ``G`` is convex
    and independent of ``eta``: its slope climbs from ``s`` to ``f'(0)`` along
    a regularized incomplete beta profile whose mean is pinned so that
    ``G(-1) = -1``. ``beta`` is a smoothstep carrying ``f''(0) = k`` over the
    last ``width`` fraction of the interval. Convexity of ``G`` makes
    ``eta -> eta G(u / eta)`` nonincreasing; the curvature term is also
    nonincreasing in ``eta`` when ``k <= 0``.
    """

    def __init__(self, eta, s, d0, k, width=0.5):
        if not d0 > 1.0:
            raise ConstructionError("patch needs f'(0) > 1")
        self.eta, self.s, self.d0, self.k, self.w = eta, s, d0, k, width
        m = (1.0 - s) / (d0 - s)
        total = max(6.0, 3.0 / min(m, 1.0 - m))
        self.a, self.b = total * (1.0 - m), total * m
        self.norm = sp.beta(self.a, self.b)

    def _x(self, u):
        return np.clip(1.0 + u / self.eta, 0.0, 1.0)

    def _xb(self, u):
        return np.clip(1.0 + u / (self.eta * self.w), 0.0, 1.0)

    def __call__(self, u):
        a, b, s, d0 = self.a, self.b, self.s, self.d0
        x = self._x(u)
        g = -1.0 + s * x + (d0 - s) * (x * sp.betainc(a, b, x) - a / (a + b) * sp.betainc(a + 1, b, x))
        return self.eta * g + 0.5 * self.k * u * u * _smoothstep(self._xb(u))

    def deriv(self, u):
        a, b, s, d0, k = self.a, self.b, self.s, self.d0, self.k
        x, xb = self._x(u), self._xb(u)
        g1 = s + (d0 - s) * sp.betainc(a, b, x)
        bw = self.eta * self.w
        return g1 + k * u * _smoothstep(xb) + 0.5 * k * u * u * _smoothstep1(xb) / bw

    def deriv2(self, u):
        a, b, s, d0, k = self.a, self.b, self.s, self.d0, self.k
        x, xb = self._x(u), self._xb(u)
        g2 = (d0 - s) * x ** (a - 1.0) * (1.0 - x) ** (b - 1.0) / self.norm
        bw = self.eta * self.w
        return (g2 / self.eta + k * _smoothstep(xb) + 2.0 * k * u * _smoothstep1(xb) / bw
                + 0.5 * k * u * u * _smoothstep2(xb) / bw ** 2)


def build_bistable_extension(
    f: Nonlinearity,
    eta: float,
    slope: Optional[float] = None,
    tail_scale: float = 1.0,
) -> Nonlinearity:
    """Extend a monostable ``f`` to a bistable map with a third fixed point at ``-eta``.

    On ``[0, 1]`` the map is ``f`` itself. On ``[-eta, 0]`` it is a C2 patch
    (see :class:`_NegativePatch`) matching ``f`` to second order at 0 and
    taking value ``-eta``, slope ``slope`` and zero curvature at ``-eta``.
    Below ``-eta`` the map saturates as ``-eta + slope * a * tanh((u + eta) / a)``
    with ``a = tail_scale``; above 1 it saturates as ``1 + B (1 - exp(-psi(u - 1)))``
    with ``psi`` quadratic, matched to ``f'(1)`` and ``f''(1)``.

    Pieces other than the patch do not depend on ``eta`` (or are monotone in
    it), which keeps the family ordered: ``f_eta' <= f_eta`` for ``eta < eta'``.
    """
    if f.kind != MONOSTABLE:
        raise ValueError("bistable extensions are built from a monostable parent")
    eta = float(eta)
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta={eta} outside (0, 1]")
    s = default_patch_slope(f) if slope is None else float(slope)
    if not 0.0 < s < 1.0:
        raise ValueError(f"patch slope {s} must lie in (0, 1)")
    a = float(tail_scale)
    if a <= 0:
        raise ValueError("tail_scale must be positive")

    patch = _NegativePatch(eta, s, float(f.deriv(0.0)), float(f.deriv2(0.0)))

    m, k = float(f.deriv(1.0)), float(f.deriv2(1.0))
    if m <= 0.0:
        raise ConstructionError("upper tail needs f'(1) > 0 to stay increasing")
    big_b = 1.0 if k >= 0.0 else min(1.0, 0.5 * m * m / abs(k))
    c = (k + m * m / big_b) / (2.0 * big_b)

    def _split(u):
        u = np.asarray(u, dtype=float)
        return u, u < -eta, (u >= -eta) & (u < 0.0), (u >= 0.0) & (u <= 1.0), u > 1.0

    def _psi(y):
        return m * y / big_b + c * y * y

    def fn(u):
        u, lo, pa, mid, hi = _split(u)
        out = np.empty_like(u)
        out[lo] = -eta + s * a * np.tanh((u[lo] + eta) / a)
        out[pa] = patch(u[pa])
        out[mid] = f(u[mid])
        y = u[hi] - 1.0
        out[hi] = 1.0 + big_b * (-np.expm1(-_psi(y)))
        return out[()] if out.ndim == 0 else out

    def deriv(u):
        u, lo, pa, mid, hi = _split(u)
        out = np.empty_like(u)
        out[lo] = s / np.cosh((u[lo] + eta) / a) ** 2
        out[pa] = patch.deriv(u[pa])
        out[mid] = f.deriv(u[mid])
        y = u[hi] - 1.0
        out[hi] = big_b * (m / big_b + 2 * c * y) * np.exp(-_psi(y))
        return out[()] if out.ndim == 0 else out

    def deriv2(u):
        u, lo, pa, mid, hi = _split(u)
        out = np.empty_like(u)
        x = (u[lo] + eta) / a
        out[lo] = -2.0 * s / a * np.tanh(x) / np.cosh(x) ** 2
        out[pa] = patch.deriv2(u[pa])
        out[mid] = f.deriv2(u[mid])
        y = u[hi] - 1.0
        dpsi = m / big_b + 2 * c * y
        out[hi] = big_b * (2 * c - dpsi * dpsi) * np.exp(-_psi(y))
        return out[()] if out.ndim == 0 else out

    params = {"kind": "bistable", "parent": f.to_dict(), "eta": eta, "slope": s, "tail_scale": a}
    g = Nonlinearity(BISTABLE, fn, deriv, deriv2, params=params, eta=eta,
                     fixed_points=(-eta, 0.0, 1.0), parent=f,
                     knots=(-eta, -eta * patch.w, 0.0, 1.0))
    report = validate_bistable(g)
    if not report.passed:
        failing = [r.name for r in report.results if not r.passed]
        raise ConstructionError(f"bistable extension eta={eta} fails {failing}")
    return g


def validate_bistable(g: Nonlinearity, n_samples: int = 2000) -> ValidationReport:
    """Sampled check of the bistable-extension shape constraints."""
    eta = g.eta
    parent = g.parent
    res = []
    u01 = np.linspace(0.0, 1.0, n_samples)
    err = float(np.max(np.abs(g(u01) - parent(u01))))
    res.append(AxiomResult("agrees with parent on [0,1]", -err, err == 0.0))
    fe = float(g(-eta))
    res.append(AxiomResult("f(-eta)=-eta", -abs(fe + eta), abs(fe + eta) <= ALGEBRAIC_TOL))
    de = float(g.deriv(-eta))
    res.append(AxiomResult("f'(-eta)<1", 1.0 - de, de < 1.0))

    def _sign_check(name, lo, hi, sign):
        u = _interior_grid(lo, hi, n_samples)
        m = float(np.min(sign * (g(u) - u)))
        res.append(AxiomResult(name, m, m > 0.0))

    _sign_check("f(u)<u on (-eta,0)", -eta, 0.0, -1.0)
    _sign_check("f(u)<u on (1,3)", 1.0, 3.0, -1.0)
    _sign_check("f(u)>u on (-2-eta,-eta)", -2.0 - eta, -eta, 1.0)
    _sign_check("f(u)>u on (0,1)", 0.0, 1.0, 1.0)

    u = np.linspace(-10.0, 10.0, 20 * n_samples)
    m = float(np.min(g.deriv(u)))
    res.append(AxiomResult("increasing", m, m >= 0.0 and np.all(np.diff(g(u)) >= 0.0)))
    vals = g(np.array([-1e6, 1e6]))
    res.append(AxiomResult("bounded", -float(np.max(np.abs(vals))), bool(np.all(np.isfinite(vals)))))
    # the pieces are only C2-joined: keep FD stencils off the joins
    # and shrink the stencil with eta, the patch curvature scales like 1/eta
    step = FD_STEP * min(1.0, eta)
    ud = np.linspace(-3.0, 3.0, 997)
    for knot in g.knots:
        ud = ud[np.abs(ud - knot) > 2 * step]
    err = fd_derivative_error(g, ud, step)
    res.append(AxiomResult("derivative consistency", FD_TOL - err, err <= FD_TOL))
    return ValidationReport(res)


@dataclass
class FamilyOrderReport:
    eta_pairs: list
    max_violation: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= ALGEBRAIC_TOL


def check_family_order(fa: Nonlinearity, fb: Nonlinearity, grid=None) -> FamilyOrderReport:
    """Largest value of ``fb(u) - fa(u)`` on ``grid``; requires ``fa.eta <= fb.eta``."""
    if fa.kind != BISTABLE or fb.kind != BISTABLE:
        raise ValueError("family order is defined for bistable extensions")
    if fa.parent is not fb.parent and fa.params.get("parent") != fb.params.get("parent"):
        raise ValueError("bistable extensions come from different parents")
    if fa.eta > fb.eta:
        raise ValueError(f"expected fa.eta <= fb.eta, got {fa.eta} > {fb.eta}")
    if grid is None:
        grid = np.linspace(-2.0, 3.0, 5001)
    grid = np.asarray(grid, dtype=float)
    viol = float(np.max(fb(grid) - fa(grid)))
    return FamilyOrderReport([(fa.eta, fb.eta)], viol)


def check_superhomogeneity(f: Nonlinearity, K0: float, n: int = 2001) -> bool:
    """True iff ``f(K0 u) <= K0 f(u)`` on a uniform grid of ``[0, 1]``."""
    if not K0 >= 1.0:
        raise ValueError("K0 must be at least 1")
    u = np.linspace(0.0, 1.0, n)
    return bool(np.all(f(K0 * u) - K0 * f(u) <= ALGEBRAIC_TOL))


def count_fixed_points(g: Nonlinearity, lo: float, hi: float, n: int = 20001) -> np.ndarray:
    """Locations of sign changes of ``g(u) - u`` on a dense grid (zeros counted once)."""
    u = np.linspace(lo, hi, n)
    r = g(u) - u
    sgn = np.sign(r)
    # exact zeros on grid nodes: merge with neighbours
    roots = []
    i = 0
    while i < n - 1:
        if sgn[i] == 0:
            roots.append(u[i])
            while i < n - 1 and sgn[i] == 0:
                i += 1
            continue
        if sgn[i] * sgn[i + 1] < 0:
            roots.append(u[i] - r[i] * (u[i + 1] - u[i]) / (r[i + 1] - r[i]))
        i += 1
    return np.array(roots)


def from_dict(spec: dict) -> Nonlinearity:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    allowed = {"ricker": {"p"}, "linear": {"slope"}, "tabulated": {"u", "f"},
               "bistable": {"parent", "eta", "slope", "tail_scale"}}
    if kind not in allowed:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ValueError(f"unknown keys for {kind!r}: {sorted(extra)}")
    if kind == "ricker":
        return ricker_normalized(spec["p"])
    if kind == "linear":
        return linear(spec["slope"])
    if kind == "tabulated":
        return tabulated(spec["u"], spec["f"])
    parent = from_dict(spec["parent"])
    return build_bistable_extension(parent, spec["eta"], slope=spec.get("slope"),
                                    tail_scale=spec.get("tail_scale", 1.0))
