"""Discretized sample-path rate functionals for uniform arrivals.

Paths live on the uniform grid ``s_k = k t / m`` and are piecewise linear,
so they carry no singular part.  Arrival paths ``phi`` have slopes ``a``,
service paths ``sigma`` slopes ``c`` and offered-load paths ``psi`` slopes
``b``; the offered load is ``psi = sigma - phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize

from .queue_sim import reflect_values
from .rate_pointwise import RateValue
from .stochastic_core import Deterministic, Exponential, Gamma, ServiceModel

__all__ = [
    "GridPath",
    "PathOptimizerConfig",
    "arrival_cost",
    "arrival_cost_grad",
    "service_cost",
    "service_cost_grad",
    "rate_os_path",
    "rate_service_path",
    "rate_offered_path",
    "offered_path_value",
    "rate_workload",
    "fluid_path",
    "fluid_workload_value",
    "reflected_end",
    "UPPER_BOUND_ONLY",
]

INF = math.inf
UPPER_BOUND_ONLY = "UPPER-BOUND-ONLY"


@dataclass(frozen=True)
class GridPath:
    """Values ``v_0 = 0, v_1, ..., v_m`` at ``s_k = k t / m``."""

    t: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a grid path needs at least one segment")
        if v[0] != 0.0:
            raise ValueError("grid paths start at 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid path values must be finite")
        if not 0.0 < self.t <= 1.0:
            raise ValueError("horizon must lie in (0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_slopes(cls, slopes, t: float) -> "GridPath":
        slopes = np.asarray(slopes, dtype=float)
        h = t / slopes.size
        return cls(t, np.concatenate(([0.0], np.cumsum(slopes) * h)))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], t: float, m: int) -> "GridPath":
        s = np.linspace(0.0, t, m + 1)
        v = np.asarray(f(s), dtype=float)
        return cls(t, v - v[0])

    @property
    def m(self) -> int:
        return self.values.size - 1

    @property
    def h(self) -> float:
        return self.t / self.m

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t, self.m + 1)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.h


@dataclass(frozen=True)
class PathOptimizerConfig:
    m: int = 200
    tolerance: float = 1e-9
    max_iterations: int = 200
    multistart: int = 8
    residual_tol: float = 1e-6
    rho0: float = 100.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    seed: int = 0
    convention: str = "corrected"

    def __post_init__(self):
        if self.m < 10:
            raise ValueError("m must be at least 10")
        if self.multistart < 1:
            raise ValueError("multistart must be at least 1")
        if self.convention not in ("corrected", "literal"):
            raise ValueError(f"unknown sign convention {self.convention!r}")


# -- additive pieces -----------------------------------------------------------

def _terminal(t: float, end: float) -> float:
    if t >= 1.0:
        return 0.0 if end <= 1.0 else INF
    if end >= 1.0:
        return INF
    return (1.0 - t) * math.log((1.0 - t) / (1.0 - end))


def arrival_cost(a: np.ndarray, h: float, t: float, end: float | None = None) -> float:
    """``-sum h log a_k`` plus the terminal term at ``phi(t)``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        return INF
    end = h * float(a.sum()) if end is None else end
    term = _terminal(t, end)
    if math.isinf(term):
        return INF
    return float(-h * np.log(a).sum()) + term


def arrival_cost_grad(a: np.ndarray, h: float, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    end = h * a.sum()
    tail = 0.0 if t >= 1.0 else (1.0 - t) / (1.0 - end)
    return -h / a + h * tail


def service_cost(c: np.ndarray, h: float, model: ServiceModel) -> float:
    vals = np.asarray(model.rate(np.asarray(c, dtype=float)), dtype=float)
    if np.any(np.isinf(vals)):
        return INF
    return float(h * vals.sum())


def service_cost_grad(c: np.ndarray, h: float, model: ServiceModel) -> np.ndarray:
    return h * np.asarray(model.rate_slope(np.asarray(c, dtype=float)), dtype=float)


def rate_os_path(phi: GridPath) -> RateValue:
    """Arrival-path rate: left Riemann sum of ``-log`` slopes plus terminal term."""
    return RateValue(arrival_cost(phi.slopes, phi.h, phi.t, end=float(phi.values[-1])))


def rate_service_path(sigma: GridPath, model: ServiceModel) -> RateValue:
    """Service-path rate ``sum h Lambda*(slope)`` with the per-unit transform."""
    return RateValue(service_cost(sigma.slopes, sigma.h, model))


# -- inner problem: best arrival path for a given offered load -----------------

def _gamma_params(model: ServiceModel) -> tuple[float, float] | None:
    if isinstance(model, Exponential):
        return 1.0, 1.0 / model.rate_param
    if isinstance(model, Gamma):
        return model.shape, model.scale
    return None


def _slope_root(b: np.ndarray, c, model: ServiceModel) -> np.ndarray:
    """Solve ``-1/a + c + Lambda*'(a + b) = 0`` for the arrival slope ``a``.

    The left side increases in ``a`` on the feasible window, so the root
    is unique.  Gamma-family services reduce to a quadratic.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    gp = _gamma_params(model)
    if gp is not None:
        k, s = gp
        q = 1.0 / s + c
        big_b = q * b - 1.0 - k
        root_d = np.sqrt(big_b * big_b + 4.0 * q * b)
        with np.errstate(divide="ignore", invalid="ignore"):
            pos = 2.0 * b / (big_b + root_d)
        neg = (root_d - big_b) / (2.0 * q)
        return np.where(big_b > 0, pos, neg)
    # at the root Lambda*'(a + b) = theta with a = 1 / (c + theta) and
    # a + b = cgf'(theta); bisect the increasing map in theta instead
    b, c = np.broadcast_arrays(b, c.astype(float))
    d_lo, d_hi = model.domain

    def excess(th):
        return model.cgf_prime(th) - 1.0 / (c + th) - b

    lo = np.maximum(-c, d_lo)
    span = np.ones_like(b)
    hi = np.minimum(lo + span, d_hi)
    for _ in range(2000):
        bad = (hi < d_hi) & (excess(hi) < 0)
        if not bad.any():
            break
        span = np.where(bad, 2.0 * span, span)
        hi = np.where(bad, np.minimum(lo + span, d_hi), hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = excess(mid) < 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
    return 1.0 / (c + 0.5 * (lo + hi))


def _lower_slopes(b: np.ndarray, model: ServiceModel) -> np.ndarray:
    s_lo, _ = model.support
    return np.maximum(0.0, s_lo - b)


@dataclass
class _Inner:
    value: float
    a: np.ndarray | None
    multiplier: float = math.nan
    residual: float = 0.0
    evaluations: int = 0


def _solve_multiplier(end_of: Callable[[float], float], t: float) -> tuple[float, float, int]:
    """Find ``c >= 0`` with ``c (1 - A(c)) = 1 - t``; ``A`` decreases in ``c``."""
    count = 0

    def g(c: float) -> float:
        nonlocal count
        count += 1
        return c * (1.0 - end_of(c)) - (1.0 - t)

    if t >= 1.0:
        # terminal term vanishes; only the constraint A <= 1 binds
        if end_of(0.0) <= 1.0:
            return 0.0, 0.0, 1
        lo = 1e-300
    else:
        lo = 1.0 - t
    hi = max(2.0 * lo, 1.0)
    while g(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e300:
            raise FloatingPointError("multiplier bracket diverged")
    if g(lo) >= 0.0:
        return lo, 0.0, count
    c = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return c, abs(g(c)), count


def _inner(b: np.ndarray, h: float, t: float, model: ServiceModel) -> _Inner:
    """Optimal arrival slopes for offered-load slopes ``b`` (service ``a + b``)."""
    b = np.asarray(b, dtype=float)
    if isinstance(model, Deterministic):
        a = model.value - b
        return _Inner(arrival_cost(a, h, t), a if np.all(a > 0) else None)
    _, s_hi = model.support
    if np.any(b >= s_hi):
        return _Inner(INF, None)
    floor = h * _lower_slopes(b, model).sum()
    if floor >= 1.0:
        return _Inner(INF, None)

    def end_of(c: float) -> float:
        return h * float(_slope_root(b, c, model).sum())

    c, resid, count = _solve_multiplier(end_of, t)
    a = _slope_root(b, c, model)
    value = arrival_cost(a, h, t) + service_cost(a + b, h, model)
    return _Inner(value, a, c, resid, count)


def _signed(b: np.ndarray, convention: str) -> np.ndarray:
    return b if convention == "corrected" else -b


def offered_path_value(b: np.ndarray, t: float, model: ServiceModel,
                       convention: str = "corrected") -> tuple[float, np.ndarray]:
    """Offered-load path rate and its gradient in the slopes ``b``.

    The gradient follows from the envelope theorem at the optimal arrival
    slopes.  Infeasible ``b`` gives ``(inf, nan)``.
    """
    b = np.asarray(b, dtype=float)
    h = t / b.size
    bb = _signed(b, convention)
    res = _inner(bb, h, t, model)
    if res.a is None or not math.isfinite(res.value):
        return INF, np.full_like(b, np.nan)
    if isinstance(model, Deterministic):
        grad = -arrival_cost_grad(res.a, h, t)
    else:
        grad = service_cost_grad(res.a + bb, h, model)
    return max(res.value, 0.0), _signed(grad, convention)


def rate_offered_path(psi: GridPath, model: ServiceModel,
                      cfg: PathOptimizerConfig | None = None) -> RateValue:
    """Offered-load path rate: best arrival path ``phi`` for the given ``psi``.

    Solved through its optimality conditions: each arrival slope solves a
    scalar monotone equation given a multiplier for the terminal term, and
    that multiplier solves one more monotone scalar equation.
    """
    cfg = cfg or PathOptimizerConfig(m=max(psi.m, 10))
    bb = _signed(psi.slopes, cfg.convention)
    res = _inner(bb, psi.h, psi.t, model)
    if res.a is None or not math.isfinite(res.value):
        return RateValue(INF, flags=("infeasible",))
    phi = GridPath.from_slopes(res.a, psi.t)
    return RateValue(max(res.value, 0.0), optimizer=phi, iterations=res.evaluations,
                     residual=res.residual,
                     info={"multiplier": res.multiplier, "convention": cfg.convention,
                           "service_path": GridPath.from_slopes(res.a + bb, psi.t)})


# -- workload rate ---------------------------------------------------------------

def fluid_path(t: float, mean: float, m: int) -> GridPath:
    """Discretized fluid offered load ``s * mean - s`` (uniform arrivals)."""
    return GridPath.from_slopes(np.full(m, mean - 1.0), t)


def fluid_workload_value(t: float, mean: float) -> float:
    return max(0.0, (mean - 1.0) * t)


def reflected_end(b: np.ndarray, h: float) -> tuple[float, int]:
    """``Gamma(psi)(t)`` for slopes ``b`` and the (first) index of the minimum."""
    psi = np.concatenate(([0.0], np.cumsum(b) * h))
    k = int(np.argmin(psi))
    return float(psi[-1] - psi[k]), k


def _split_scan(t: float, y: float, model: ServiceModel, m: int):
    """Exact optimum over paths whose rise after grid split ``k`` is at least ``y``.

    For a fixed split the problem is convex and symmetric within each
    piece, so the optimal arrival and service slopes are constant on
    ``[0, s]`` and on ``[s, t]``.  Returns per-split values and slopes.
    """
    h = t / m
    k = np.arange(m)
    s = k * h
    rest = t - s
    delta = y / rest
    mean = model.mean
    values = np.full(m, INF)
    a1 = np.ones(m)
    a2 = np.ones(m)
    c2 = np.full(m, mean)
    slack = rest * (mean - 1.0) >= y
    values[slack] = 0.0
    act = ~slack
    if not act.any():
        return values, a1, a2, c2
    sa, ra, da = s[act], rest[act], delta[act]
    if isinstance(model, Deterministic):
        alpha2 = model.value - da
        with np.errstate(divide="ignore", invalid="ignore"):
            if t < 1.0:
                alpha1 = (1.0 - ra * alpha2) / (1.0 - t + sa)
            else:
                alpha1 = np.where(sa > 0, (1.0 - ra * alpha2) / np.where(sa > 0, sa, 1.0), 1.0)
        ok = (alpha2 > 0) & (alpha1 > 0)
        vals = np.full(sa.size, INF)
        for i in np.flatnonzero(ok):
            end = sa[i] * alpha1[i] + ra[i] * alpha2[i]
            term = _terminal(t, end)
            logs = (sa[i] * math.log(alpha1[i]) if sa[i] > 0 else 0.0) + ra[i] * math.log(alpha2[i])
            vals[i] = -logs + term
        values[act] = vals
        a1[act] = np.where(ok, alpha1, 1.0)
        a2[act] = np.where(ok, alpha2, 1.0)
        c2[act] = model.value
        return values, a1, a2, c2

    _, s_hi = model.support
    feas = (da < s_hi) & (ra * _lower_slopes(da, model) < 1.0)
    vals = np.full(sa.size, INF)
    al1 = np.ones(sa.size)
    al2 = np.ones(sa.size)
    for i in np.flatnonzero(feas):
        si, ri, di = sa[i], ra[i], da[i]

        def end_of(c, si=si, ri=ri, di=di):
            first = si / c if si > 0 else 0.0
            return first + ri * float(_slope_root(np.array([di]), c, model)[0])

        if si > 0 and t >= 1.0:
            c, _, _ = _solve_multiplier_positive(end_of)
        else:
            c, _, _ = _solve_multiplier(end_of, t)
        alpha2 = float(_slope_root(np.array([di]), c, model)[0])
        alpha1 = 1.0 / c if si > 0 else 1.0
        end = (si * alpha1 if si > 0 else 0.0) + ri * alpha2
        term = _terminal(t, end)
        svc = float(model.rate(alpha2 + di))
        logs = (si * math.log(alpha1) if si > 0 else 0.0) + ri * math.log(alpha2)
        vals[i] = -logs + term + ri * svc
        al1[i], al2[i] = alpha1, alpha2
    values[act] = vals
    a1[act] = al1
    a2[act] = al2
    c2[act] = al2 + da
    return values, a1, a2, c2


def _solve_multiplier_positive(end_of: Callable[[float], float]) -> tuple[float, float, int]:
    # t = 1 with a free first piece: A(c) -> inf as c -> 0, so A(c) = 1 has a root
    lo, hi = 1e-12, 1.0
    while end_of(lo) <= 1.0:
        lo /= 2.0
    while end_of(hi) > 1.0:
        hi *= 2.0
    c = brentq(lambda c: 1.0 - end_of(c), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return c, 0.0, 0


def _split_path(k: int, m: int, t: float, a1: float, a2: float, c2: float,
                mean: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.where(np.arange(m) < k, a1, a2)
    c = np.where(np.arange(m) < k, mean, c2)
    return c - a, a


@dataclass
class _Candidate:
    value: float
    b: np.ndarray
    residual: float
    start: int
    label: str
    converged: bool
    iterations: int = 0


def _project(b: np.ndarray, y: float, h: float, t: float, anchor_low: np.ndarray,
             tol: float = 1e-13) -> np.ndarray:
    """Move ``b`` onto ``Gamma(psi)(t) = y`` without raising the rate.

    Below the target a ramp after the running minimum closes the gap; above
    it a convex combination with ``anchor_low`` (which has ``Gamma <= y``)
    is bisected, which by convexity cannot exceed the larger endpoint rate.
    """
    g, k = reflected_end(b, h)
    if abs(g - y) <= tol:
        return b
    if g < y:
        psi = np.concatenate(([0.0], np.cumsum(b) * h))
        k = int(np.argmin(psi[:-1]))
        gap = y - (psi[-1] - psi[k])
        out = b.copy()
        out[k:] += gap / (t - k * h)
        return out
    lo, hi = 0.0, 1.0
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        g, _ = reflected_end(lam * b + (1.0 - lam) * anchor_low, h)
        if g > y:
            hi = lam
        else:
            lo = lam
        if hi - lo < 1e-16:
            break
    return lo * b + (1.0 - lo) * anchor_low


def _penalty_refine(b0: np.ndarray, y: float, t: float, model: ServiceModel,
                    cfg: PathOptimizerConfig) -> tuple[np.ndarray, bool, int]:
    h = t / b0.size
    b = b0.copy()
    rho = cfg.rho0
    converged = False
    iters = 0
    big = 1e12

    while True:
        def fun(x, rho=rho):
            v, grad = offered_path_value(x, t, model)
            g, k = reflected_end(x, h)
            if not math.isfinite(v):
                return big, np.zeros_like(x)
            r = g - y
            dg = np.zeros_like(x)
            dg[k:] = h
            return v + rho * r * r, grad + 2.0 * rho * r * dg

        res = minimize(fun, b, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.max_iterations, "ftol": cfg.tolerance,
                                "gtol": 1e-10})
        iters += int(res.nit)
        if res.fun < big and np.all(np.isfinite(res.x)):
            b = res.x
        resid = abs(reflected_end(b, h)[0] - y)
        converged = bool(res.success)
        if resid < cfg.residual_tol or rho >= cfg.rho_max:
            break
        rho *= cfg.rho_growth
    return b, converged and resid < cfg.residual_tol, iters


def rate_workload(t: float, y: float, model: ServiceModel,
                  cfg: PathOptimizerConfig | None = None) -> RateValue:
    """Workload rate at time ``t``: least offered-load path rate with ``Gamma(psi)(t) = y``.

    Starts: the exact best single-split ramp (when ``y`` is at or above
    the fluid workload), the projected fluid path, ramps at other splits
    and random perturbations.  Each start is refined by a quadratic
    penalty method with escalating weight and then projected exactly onto
    the constraint, so the returned path is always feasible and its rate
    an upper bound.  ``optimizer`` holds the achieving offered-load path.
    """
    cfg = cfg or PathOptimizerConfig()
    if cfg.convention != "corrected":
        raise ValueError("the workload rate is defined under the corrected convention")
    if not 0.0 < t <= 1.0:
        raise ValueError("t must lie in (0, 1]")
    if y < 0:
        return RateValue(INF, flags=("infeasible",))
    m = cfg.m
    h = t / m
    mean = model.mean
    fluid_b = np.full(m, mean - 1.0)
    w_bar = float(reflected_end(fluid_b, h)[0])
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(m,)))

    starts: list[tuple[str, np.ndarray, bool]] = []
    certificate = None
    if y >= w_bar:
        values, a1, a2, c2 = _split_scan(t, y, model, m)
        order = np.argsort(values, kind="stable")
        best = int(order[0])
        if math.isfinite(values[best]):
            b_best, _ = _split_path(best, m, t, a1[best], a2[best], c2[best], mean)
            certificate = float(values[best])
            starts.append(("split-ramp", b_best, True))
            others = [int(k) for k in np.linspace(0, m - 1, 6).round().astype(int)
                      if k != best and math.isfinite(values[k])]
            for k in others:
                b_k, _ = _split_path(k, m, t, a1[k], a2[k], c2[k], mean)
                starts.append((f"ramp@{k}", b_k, False))
        anchor_low = fluid_b
        starts.insert(min(1, len(starts)), ("fluid-shift", _project(fluid_b, y, h, t, fluid_b), False))
    else:
        rise = mean - 1.0
        scaled = fluid_b * (y / w_bar)
        anchor_low = scaled
        starts.append(("fluid-scaled", scaled, False))
        k_up = int(min(m, max(1, math.ceil(y / (rise * h)))))
        b = np.zeros(m)
        b[:k_up] = rise
        starts.append(("fluid-then-flat", _project(b, y, h, t, scaled), False))
        b = np.zeros(m)
        b[m - k_up:] = rise
        starts.append(("flat-then-fluid", _project(b, y, h, t, scaled), False))

    base = starts[0][1]
    scale = max(abs(mean - 1.0), 0.1)
    while len(starts) < cfg.multistart:
        noise = rng.normal(0.0, 0.2 * scale, m)
        starts.append((f"perturbed-{len(starts)}", base + noise, False))
    starts = starts[: cfg.multistart]

    candidates: list[_Candidate] = []
    for idx, (label, b0, certified) in enumerate(starts):
        b0 = _project(b0, y, h, t, anchor_low)
        v0, _ = offered_path_value(b0, t, model)
        if math.isfinite(v0):
            candidates.append(_Candidate(v0, b0, abs(reflected_end(b0, h)[0] - y), idx,
                                         label, certified))
        else:
            continue
        b1, ok, iters = _penalty_refine(b0, y, t, model, cfg)
        b1 = _project(b1, y, h, t, anchor_low)
        v1, _ = offered_path_value(b1, t, model)
        if math.isfinite(v1):
            candidates.append(_Candidate(v1, b1, abs(reflected_end(b1, h)[0] - y), idx,
                                         label + "+penalty", ok or certified, iters))

    feasible = [c for c in candidates if c.residual < cfg.residual_tol]
    if not feasible:
        return RateValue(INF, flags=("infeasible",), converged=False,
                         info={"fluid_workload": w_bar})
    best = min(feasible, key=lambda c: (c.value, c.start))
    converged = certificate is not None or any(c.converged for c in feasible
                                               if c.value <= best.value + cfg.tolerance)
    flags = () if converged else (UPPER_BOUND_ONLY,)
    return RateValue(
        max(best.value, 0.0),
        optimizer=GridPath.from_slopes(best.b, t),
        iterations=sum(c.iterations for c in candidates),
        residual=best.residual,
        converged=converged,
        flags=flags,
        info={"fluid_workload": w_bar, "start": best.start, "label": best.label,
              "certificate": certificate, "starts": len(starts)},
    )
