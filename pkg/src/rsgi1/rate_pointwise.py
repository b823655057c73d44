"""Rate functions at a fixed time t.

All evaluators are total on the extended reals: infeasible arguments give
``inf`` rather than raising, with ``0 * log 0 = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .optimize import bracket_concave_max, golden_section_max, golden_section_min
from .stochastic_core import ArrivalModel, ServiceModel

__all__ = [
    "RateValue",
    "Partition",
    "rate_os",
    "rate_os_general",
    "legendre",
    "legendre_closed",
    "rate_offered",
    "cubic_stationarity_exp",
    "CubicReport",
    "rate_increments",
]

INF = math.inf


@dataclass
class RateValue:
    """A nonnegative extended-real rate plus optimizer diagnostics."""

    value: float
    optimizer: np.ndarray | float | None = None
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    flags: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass(frozen=True)
class Partition:
    """Time points ``0 <= t_1 < ... < t_d <= t``."""

    t: float
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if not 0 < self.t <= 1:
            raise ValueError("horizon t must lie in (0, 1]")
        if len(pts) < 1:
            raise ValueError("a partition needs at least one point")
        if pts[0] < 0 or pts[-1] > self.t:
            raise ValueError("partition points must lie in [0, t]")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("partition points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.points)))


def _plogpq(p: float, q: float) -> float:
    """``p log(p / q)`` with ``0 log(0/q) = 0`` and ``q <= 0 -> inf``."""
    if p == 0.0:
        return 0.0
    if q <= 0.0:
        return INF
    return p * math.log(p / q)


def _os_value(t: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        return INF
    return _plogpq(t, x) + _plogpq(1.0 - t, 1.0 - x)


def rate_os(t: float, x: float) -> RateValue:
    """Order-statistics rate ``t log(t/x) + (1-t) log((1-t)/(1-x))``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return RateValue(max(_os_value(t, float(x)), 0.0), optimizer=None)


def rate_os_general(t: float, y: float, arrival: ArrivalModel) -> RateValue:
    if not (arrival.strictly_increasing and arrival.absolutely_continuous):
        raise ValueError("arrival cdf must be continuous and strictly increasing")
    if y < 0:
        return RateValue(INF)
    return rate_os(t, float(arrival.cdf(y)))


def legendre(model: ServiceModel, t: float, x: float, tol: float = 1e-10) -> RateValue:
    """``sup_theta {theta x - t cgf(theta)}`` by bracketed golden-section search.

    Works from the CGF alone.  The support bounds only short-circuit
    points where the supremum is plainly infinite.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError("t must lie in (0, 1]")
    s_lo, s_hi = model.support
    if x < t * s_lo or x > t * s_hi:
        return RateValue(INF, optimizer=None, flags=("outside-support",))

    def objective(th: float) -> float:
        phi = model.cgf(th)
        return -INF if math.isinf(phi) else th * x - t * phi

    drift = x - t * model.mean
    if drift == 0.0:
        return RateValue(0.0, optimizer=0.0)
    direction = 1.0 if drift > 0 else -1.0
    d_lo, d_hi = model.domain
    limit = d_hi if direction > 0 else d_lo
    near, far, bounded = bracket_concave_max(objective, 0.0, direction, limit)
    if not bounded:
        # supremum approached as |theta| -> inf: finite only if it has settled
        a, b = objective(far / 2.0), objective(far)
        if abs(b - a) <= 1e-12 * max(1.0, abs(b)):
            return RateValue(max(b, 0.0), optimizer=far, flags=("boundary-limit",))
        return RateValue(INF, optimizer=None, flags=("unbounded",))
    res = golden_section_max(objective, min(near, far), max(near, far), tol)
    return RateValue(max(res.value, 0.0), optimizer=res.x, iterations=res.iterations,
                     residual=res.width)


def legendre_closed(model: ServiceModel, t: float, x):
    """``t * rate(x / t)`` from the model's closed-form per-unit transform."""
    return t * model.rate(np.asarray(x, dtype=float) / t)


def _support_window(model: ServiceModel, t: float, y: float) -> tuple[float, float]:
    s_lo, s_hi = model.support
    return max(y, 0.0, y + t * s_lo), min(1.0, y + t * s_hi)


def rate_offered(t: float, y: float, model: ServiceModel, conjugate: str = "closed",
                 tol: float = 1e-10, convention: str = "literal") -> RateValue:
    """Offered-load rate ``inf_{x1 = x2 + y} I_t(x1) + Lambda*_t(x2)``.

    One-dimensional convex minimization over the arrival coordinate ``x1``;
    ``conjugate='numeric'`` uses :func:`legendre` for the service term.

    With ``convention='literal'`` ``y`` is arrival minus service, so the
    zero sits at ``y = t - t * mean``.  ``convention='corrected'`` reads
    ``y`` as service minus arrival (the sign of ``X = S - T``) and matches
    the path-level rate of a straight offered-load path.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    if convention == "corrected":
        y = -y
    elif convention != "literal":
        raise ValueError(f"unknown sign convention {convention!r}")
    if conjugate == "closed":
        def service_rate(x2):
            return float(legendre_closed(model, t, x2))
    elif conjugate == "numeric":
        def service_rate(x2):
            return legendre(model, t, x2).value
    else:
        raise ValueError(f"unknown conjugate mode {conjugate!r}")

    def objective(x1: float) -> float:
        return _os_value(t, x1) + service_rate(x1 - y)

    lo, hi = _support_window(model, t, y)
    if lo > hi:
        return RateValue(INF, flags=("infeasible",))
    if lo == hi:
        s_lo, s_hi = model.support
        v = _os_value(t, lo) + (0.0 if s_lo == s_hi else service_rate(lo - y))
        return RateValue(v, optimizer=lo if math.isfinite(v) else None)
    res = golden_section_min(objective, lo, hi, tol)
    if not math.isfinite(res.value):
        return RateValue(INF, flags=("infeasible",))
    return RateValue(max(res.value, 0.0), optimizer=res.x, iterations=res.iterations,
                     residual=res.width)


@dataclass(frozen=True)
class CubicReport:
    root: float
    value: float
    derived_residual: float
    printed_residual: float
    bracket: tuple[float, float]
    iterations: int


def _exp_offered_objective(t: float, y: float, x: float) -> float:
    # I_t(x) + Lambda*_t(x - y) for unit-mean exponential service
    z = x - y
    if z <= 0.0 or not 0.0 < x < 1.0:
        return INF
    return _os_value(t, x) + z - t + t * math.log(t / z)


def cubic_stationarity_exp(t: float, y: float, tol: float = 1e-15) -> CubicReport:
    """Stationary point of the offered-load objective for Exp(1) service.

    Bisects the first-order condition
    ``-t/x + (1-t)/(1-x) - t/(x-y) + 1 = 0`` on ``(max(y, 0), 1)``, then
    reports the residual of both the derived cubic
    ``x^3 - (2+t+y) x^2 + 2(t+y) x - t y`` and the cubic
    ``x^3 - y x^2 - 2 t x + t y`` at the root.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    lo, hi = max(y, 0.0), 1.0
    if lo >= hi:
        return CubicReport(math.nan, INF, math.nan, math.nan, (lo, hi), 0)

    def foc(x: float) -> float:
        return -t / x + (1.0 - t) / (1.0 - x) - t / (x - y) + 1.0

    a, b = lo, hi
    it = 0
    while b - a > tol and it < 200:
        it += 1
        mid = 0.5 * (a + b)
        if mid <= lo or mid >= hi:
            break
        if foc(mid) < 0.0:
            a = mid
        else:
            b = mid
    x = 0.5 * (a + b)
    derived = x**3 - (2.0 + t + y) * x**2 + 2.0 * (t + y) * x - t * y
    printed = x**3 - y * x**2 - 2.0 * t * x + t * y
    return CubicReport(x, _exp_offered_objective(t, y, x), derived, printed, (lo, hi), it)


def rate_increments(partition: Partition, y: Sequence[float]) -> RateValue:
    """Rate of the increment vector of the order-statistics process.

    ``sum_i w_i log(w_i / y_i) + (1 - t_d) log((1 - t_d) / (1 - sum y))``
    with ``w_i = t_i - t_{i-1}``.  The tail weight uses the last partition
    point, which coincides with the horizon when ``t_d = t``.
    """
    y = np.asarray(y, dtype=float)
    w = partition.widths
    if y.shape != w.shape:
        raise ValueError(f"expected {w.size} increments, got {y.size}")
    total = 0.0
    for wi, yi in zip(w, y):
        if yi < 0:
            return RateValue(INF, flags=("infeasible",))
        total += _plogpq(float(wi), float(yi))
    tail = 1.0 - partition.points[-1]
    rest = 1.0 - float(y.sum())
    if rest < 0 or (rest == 0 and tail > 0):
        return RateValue(INF, flags=("infeasible",))
    total += _plogpq(tail, rest)
    return RateValue(max(total, 0.0) if math.isfinite(total) else INF)
