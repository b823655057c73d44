"""Exact oracles and Monte Carlo estimators for rare events of the queue.

Workload events refer to ``W^n(t) = W_k`` with ``k = floor(n t)``, the
work found by the k-th arrival.  Replications are split into chunks; chunk
``i`` draws from ``RngSpec.child(i)`` and chunk sums are reduced in chunk
order, so results do not depend on how the work is scheduled.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .queue_sim import max_representation_workload
from .rate_pointwise import rate_offered, rate_os
from .stochastic_core import (
    ArrivalModel,
    Deterministic,
    Empirical,
    RngSpec,
    ServiceModel,
    order_stats_from_exponentials,
)

__all__ = [
    "McEstimate",
    "TailQuery",
    "QueueTemplate",
    "OsTail",
    "job_index",
    "exact_os_tail",
    "binomial_tail",
    "exact_workload_tail",
    "mc_os_tail",
    "is_os_tail",
    "mc_workload_tail",
    "is_workload_tail",
    "TiltChoice",
    "heuristic_tilts",
    "SlopeRow",
    "SlopeReport",
    "ldp_slope",
    "wilson_interval",
]

Z95 = 1.959963984540054
DEFAULT_CHUNK = 20_000


def job_index(n: int, t: float) -> int:
    """``floor(n t)`` guarded against representation error in ``n * t``."""
    return int(math.floor(n * t + 1e-9))


@dataclass(frozen=True)
class TailQuery:
    n: int
    t: float
    threshold: float
    direction: str = "le"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0.0 < self.t <= 1.0:
            raise ValueError("t must lie in (0, 1]")
        if self.direction not in ("le", "gt"):
            raise ValueError("direction is 'le' or 'gt'")


@dataclass(frozen=True)
class QueueTemplate:
    n: int
    arrival: ArrivalModel
    service: ServiceModel

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    reps: int
    variance: float
    ci: tuple[float, float]
    ci_log: tuple[float, float]
    method: str = "naive"
    ci_method: str = "normal"
    hits: int = 0
    theta1: float | None = None
    theta2: float | None = None
    theta3: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.reps)

    @property
    def relative_half_width(self) -> float:
        if self.p_hat <= 0.0:
            return math.inf
        return 0.5 * (self.ci[1] - self.ci[0]) / self.p_hat


def wilson_interval(hits: int, reps: int, z: float = Z95) -> tuple[float, float]:
    p = hits / reps
    denom = 1.0 + z * z / reps
    centre = (p + z * z / (2 * reps)) / denom
    half = z * math.sqrt(p * (1 - p) / reps + z * z / (4 * reps * reps)) / denom
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


def _log_ci(p: float, se: float) -> tuple[float, float]:
    if p <= 0.0:
        return 0.0, 0.0
    spread = Z95 * se / p
    return p * math.exp(-spread), p * math.exp(spread)


def _finish(total: float, total_sq: float, hits: int, reps: int, *, method: str,
            indicator: bool, **extra) -> McEstimate:
    p = total / reps
    var = max(total_sq / reps - p * p, 0.0) * reps / max(reps - 1, 1)
    se = math.sqrt(var / reps)
    if indicator and hits < 30:
        ci, how = wilson_interval(hits, reps), "wilson"
    else:
        ci, how = (max(0.0, p - Z95 * se), p + Z95 * se), "normal"
    return McEstimate(p, reps, var, ci, _log_ci(p, se), method, how, hits, **extra)


def _chunks(reps: int, chunk: int):
    for i, start in enumerate(range(0, reps, chunk)):
        yield i, min(chunk, reps - start)


def _spec(rng) -> RngSpec:
    if isinstance(rng, RngSpec):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngSpec(0 if rng is None else int(rng))
    raise TypeError("Monte Carlo estimators need an RngSpec or integer seed")


# -- exact oracles ----------------------------------------------------------------

@dataclass(frozen=True)
class OsTail:
    p: float
    log_p: float

    def __float__(self) -> float:
        return self.p


def _log_pmf(n: int, a: float, ks: np.ndarray) -> np.ndarray:
    return (gammaln(n + 1) - gammaln(ks + 1) - gammaln(n - ks + 1)
            + ks * math.log(a) + (n - ks) * math.log1p(-a))


def binomial_tail(n: int, a: float, k: int, order: str = "auto") -> OsTail:
    """``P(Bin(n, a) >= k)`` summed in log space.

    ``order='upper'`` sums the terms ``k..n``; ``'lower'`` sums ``0..k-1``
    and complements; ``'auto'`` picks whichever tail is the smaller one.
    """
    if k <= 0 or a >= 1.0:
        return OsTail(1.0, 0.0)
    if k > n or a <= 0.0:
        return OsTail(0.0, -math.inf)
    if order == "auto":
        order = "upper" if k >= n * a else "lower"
    if order == "upper":
        log_p = float(logsumexp(_log_pmf(n, a, np.arange(k, n + 1))))
        return OsTail(math.exp(log_p), log_p)
    if order == "lower":
        log_q = float(logsumexp(_log_pmf(n, a, np.arange(0, k))))
        log_p = math.log(-math.expm1(log_q)) if log_q < 0 else -math.inf
        return OsTail(-math.expm1(log_q), log_p)
    raise ValueError(f"unknown summation order {order!r}")


def exact_os_tail(n: int, t: float, a: float, order: str = "auto") -> OsTail:
    """``P(T_(floor(nt)) <= a) = P(Bin(n, a) >= floor(nt))`` for uniform epochs."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return binomial_tail(n, a, job_index(n, t), order)


def _order_stats_above(n: int, bounds: np.ndarray) -> float:
    """``P(U_(m) > b_m for m = 1..K)`` for n uniforms, ``b`` nondecreasing.

    Equivalent to ``#{U <= b_m} <= m - 1`` for every m; the counts are
    tracked across the levels with binomial transitions.
    """
    probs = np.zeros(n + 1)
    probs[0] = 1.0
    prev = 0.0
    for m, b in enumerate(np.clip(bounds, 0.0, 1.0), start=1):
        if b > prev:
            q = min(1.0, (b - prev) / (1.0 - prev))
            nxt = np.zeros(n + 1)
            for used in np.flatnonzero(probs):
                free = n - used
                nxt[used:] += probs[used] * binom.pmf(np.arange(free + 1), free, q)
            probs = nxt
            prev = float(b)
        probs[m:] = 0.0
    return float(probs.sum())


def exact_workload_tail(n: int, t: float, w: float, model: ServiceModel) -> float:
    """``P(W^n(t) > w)`` for uniform epochs and a finite-support service law.

    Given the services, ``W_k <= w`` says every suffix sum of the spacings
    ``D_{i+2} + ... + D_k`` is at least ``S_{k-1} - S_i - w``.  Spacings are
    exchangeable, so those suffix sums have the joint law of the order
    statistics ``U_(1..k-1)``; the conditional probability is a boundary
    problem for order statistics.  Services are then enumerated.
    """
    if isinstance(model, Deterministic):
        atoms, weights = (model.value,), (1.0,)
    elif isinstance(model, Empirical):
        atoms, weights = model.atoms, model.weights
    else:
        raise TypeError("exact enumeration needs a finite-support service law")
    k = job_index(n, t)
    if w < 0:
        return 1.0
    if k <= 1:
        return 0.0
    total = []
    for combo in itertools.product(range(len(atoms)), repeat=k - 1):
        nu = np.array([atoms[i] for i in combo]) / n
        weight = math.prod(weights[i] for i in combo)
        s = np.concatenate(([0.0], np.cumsum(nu)))  # S_0..S_{k-1}
        bounds = s[k - 1] - s[k - 2::-1] - w  # m = 1..k-1 uses S_{k-1-m}
        total.append(weight * (1.0 - _order_stats_above(n, bounds)))
    return math.fsum(total)


# -- order-statistics tail by simulation -------------------------------------------

def mc_os_tail(n: int, t: float, a: float, reps: int, rng=None, method: str = "sort",
               chunk: int = DEFAULT_CHUNK) -> McEstimate:
    """Naive estimate of ``P(T_(floor(nt)) <= a)``."""
    k = job_index(n, t)
    spec = _spec(rng)
    sums, squares, hits = [], [], 0
    for i, size in _chunks(reps, chunk):
        g = spec.child(i).generator()
        if method == "sort":
            u = np.sort(g.random((size, n)), axis=1)
        elif method == "expo-ratio":
            u = order_stats_from_exponentials(g.standard_exponential((size, n + 1)))
        else:
            raise ValueError(f"unknown order-statistics method {method!r}")
        ind = (u[:, k - 1] <= a) if k >= 1 else np.ones(size, bool)
        c = int(ind.sum())
        hits += c
        sums.append(float(c))
        squares.append(float(c))
    return _finish(math.fsum(sums), math.fsum(squares), hits, reps, method=method,
                   indicator=True)


def is_os_tail(n: int, t: float, a: float, theta1: float, theta3: float, reps: int,
               rng=None, chunk: int = DEFAULT_CHUNK) -> McEstimate:
    """Importance-sampled ``P(T_(floor(nt)) <= a)``.

    The first ``k`` spacing exponentials are drawn with rate ``1 - theta1``
    and the remaining ``n + 1 - k`` with rate ``1 - theta3``.
    """
    for th in (theta1, theta3):
        if not th < 1.0:
            raise ValueError("exponential tilts must be below 1")
    k = job_index(n, t)
    spec = _spec(rng)
    sums, squares, hits = [], [], 0
    for i, size in _chunks(reps, chunk):
        g = spec.child(i).generator()
        xi = g.standard_exponential((size, n + 1))
        log_lr = np.zeros(size)
        for th, sl in ((theta1, slice(0, k)), (theta3, slice(k, n + 1))):
            if th != 0.0:
                xi[:, sl] /= 1.0 - th
                width = xi[:, sl].shape[1]
                log_lr += -th * xi[:, sl].sum(axis=1) - width * math.log1p(-th)
        u = order_stats_from_exponentials(xi)
        ind = (u[:, k - 1] <= a) if k >= 1 else np.ones(size, bool)
        contrib = np.where(ind, np.exp(log_lr), 0.0)
        hits += int(ind.sum())
        sums.append(math.fsum(contrib))
        squares.append(math.fsum(contrib * contrib))
    return _finish(math.fsum(sums), math.fsum(squares), hits, reps, method="is",
                   indicator=False, theta1=theta1, theta3=theta3)


# -- workload tail by simulation -------------------------------------------------

def _workload_chunk(g: np.random.Generator, size: int, q: QueueTemplate, k: int,
                    theta1: float, theta2: float, theta3: float, method: str):
    """One chunk of ``W_k`` draws plus their log likelihood ratios.

    Draw order is fixed: spacing exponentials first, then services; with all
    tilts zero no rescaling happens, so draws match the naive sampler.
    """
    n = q.n
    log_lr = np.zeros(size)
    if method == "sort":
        u = np.sort(g.random((size, n)), axis=1)
    else:
        xi = g.standard_exponential((size, n + 1))
        for th, sl in ((theta1, slice(0, k)), (theta3, slice(k, n + 1))):
            if th != 0.0:
                xi[:, sl] /= 1.0 - th
                width = xi[:, sl].shape[1]
                log_lr += -th * xi[:, sl].sum(axis=1) - width * math.log1p(-th)
        u = order_stats_from_exponentials(xi)
    # only services 1..k-1 can move W_k
    tilted = max(k - 1, 0)
    if theta2 == 0.0 or tilted == 0:
        nu = q.service.sample((size, n), g)
    else:
        head = q.service.tilt(theta2).sample((size, tilted), g)
        tail = q.service.sample((size, n - tilted), g)
        nu = np.concatenate((head, tail), axis=1)
        log_lr += -theta2 * head.sum(axis=1) + tilted * float(q.service.cgf(theta2))
    epochs = q.arrival.epochs(u)
    w = max_representation_workload(epochs, nu / n)[:, k]
    return w, log_lr


def _workload_estimate(q: QueueTemplate, t: float, w: float, reps: int, rng, method: str,
                       tilts: tuple[float, float, float], chunk: int, label: str,
                       indicator: bool, **extra) -> McEstimate:
    if reps < 1:
        raise ValueError("reps must be positive")
    if method not in ("sort", "expo-ratio"):
        raise ValueError(f"unknown order-statistics method {method!r}")
    k = job_index(q.n, t)
    spec = _spec(rng)
    sums, squares, lr_sums, hits = [], [], [], 0
    for i, size in _chunks(reps, chunk):
        g = spec.child(i).generator()
        wk, log_lr = _workload_chunk(g, size, q, k, *tilts, method)
        lr = np.exp(log_lr)
        ind = wk > w
        contrib = np.where(ind, lr, 0.0)
        hits += int(ind.sum())
        sums.append(math.fsum(contrib))
        squares.append(math.fsum(contrib * contrib))
        lr_sums.append(math.fsum(lr))
    est = _finish(math.fsum(sums), math.fsum(squares), hits, reps, method=label,
                  indicator=indicator, **extra)
    est.info["lr_mean"] = math.fsum(lr_sums) / reps
    est.info["k"] = k
    est.info["sampler"] = method
    return est


def mc_workload_tail(q: QueueTemplate, t: float, w: float, reps: int, rng=None,
                     method: str = "sort", chunk: int = DEFAULT_CHUNK) -> McEstimate:
    """Naive estimate of ``P(W^n(t) > w)``."""
    if reps < 100:
        raise ValueError("naive Monte Carlo needs at least 100 replications")
    return _workload_estimate(q, t, w, reps, rng, method, (0.0, 0.0, 0.0), chunk,
                              "naive", True)


def is_workload_tail(q: QueueTemplate, t: float, w: float, theta1: float, theta2: float,
                     reps: int, rng=None, theta3: float = 0.0,
                     chunk: int = DEFAULT_CHUNK) -> McEstimate:
    """Importance-sampled ``P(W^n(t) > w)`` on the exponential-ratio sampler.

    ``theta1`` tilts the first ``k`` spacing exponentials, ``theta3`` the
    other ``n + 1 - k``; ``theta2`` tilts the services that precede the
    k-th arrival.  Each replication carries its exact likelihood ratio.
    """
    for th in (theta1, theta3):
        if not th < 1.0:
            raise ValueError("exponential tilts must be below 1")
    if theta2 != 0.0 and not q.service.in_domain(theta2):
        raise ValueError(f"service tilt {theta2} outside the CGF domain {q.service.domain}")
    return _workload_estimate(q, t, w, reps, rng, "expo-ratio", (theta1, theta2, theta3),
                              chunk, "is", False, theta1=theta1, theta2=theta2,
                              theta3=theta3)


@dataclass(frozen=True)
class TiltChoice:
    theta1: float
    theta2: float
    theta3: float
    arrival_target: float
    service_target: float


def heuristic_tilts(t: float, w: float, model: ServiceModel) -> TiltChoice:
    """Tilts aimed at the most likely straight-line route to ``W(t) > w``.

    The arrival target ``x`` and the service total ``x + w`` come from the
    pointwise offered-load rate.  With ``theta* = (t - x) / (1 - x)`` the
    complement block is tilted by ``theta*`` and the first block by
    ``-(t - x) / x``, which puts the tilted mean of ``T_(k)`` at ``x``.
    The service tilt is the Legendre maximizer at the per-unit rate
    ``(x + w) / t``.
    """
    tt = min(t, 1.0 - 1e-9)
    res = rate_offered(tt, w, model, convention="corrected")
    if not res.is_finite or res.optimizer is None:
        raise ValueError("no finite-rate route to the target event")
    x = float(res.optimizer)
    theta_star = (t - x) / (1.0 - x)
    theta1 = -(t - x) / x
    target = (x + w) / t
    theta2 = float(model.rate_slope(target))
    if not model.in_domain(theta2):
        theta2 = 0.0
    return TiltChoice(theta1, theta2, theta_star, x, x + w)


# -- empirical decay rates ----------------------------------------------------------

@dataclass(frozen=True)
class SlopeRow:
    n: int
    p: float
    neg_log_p_over_n: float
    rate_ref: float
    gap: float
    gap_band: tuple[float, float] | None = None


@dataclass(frozen=True)
class SlopeReport:
    rows: tuple[SlopeRow, ...]
    excluded: tuple[int, ...]
    strictly_decreasing: bool
    fitted_slope: float

    @property
    def gaps(self) -> list[float]:
        return [r.gap for r in self.rows]


def ldp_slope(queries: Sequence[TailQuery], source="exact", rate_ref: float | None = None,
              reps: int = 100_000, rng=None, template: QueueTemplate | None = None,
              tilts: tuple[float, float] | None = None) -> SlopeReport:
    """Compare ``-(1/n) log p_n`` with a rate value across a family of ``n``.

    ``source`` is ``'exact'``, ``'mc'``, ``'is'`` or a callable
    ``query -> probability``.  Order-statistics queries (``direction='le'``)
    default to ``rate_os(t, a)`` as reference; workload queries need
    ``template`` and an explicit ``rate_ref``.  Simulation sources carry a
    gap band from the log-scale confidence interval.  ``fitted_slope`` is
    the least-squares slope of ``-log p_n`` against ``n``.
    """
    if len(queries) < 3:
        raise ValueError("need at least three values of n")
    rows, excluded = [], []
    for q in queries:
        ref = rate_ref
        if ref is None:
            if q.direction != "le":
                raise ValueError("workload families need an explicit rate_ref")
            ref = rate_os(q.t, q.threshold).value
        band = None
        if callable(source):
            p = float(source(q))
        elif source == "exact":
            if q.direction != "le":
                if template is None:
                    raise ValueError("workload queries need a template")
                p = exact_workload_tail(q.n, q.t, q.threshold, template.service)
            else:
                p = exact_os_tail(q.n, q.t, q.threshold).p
        elif source in ("mc", "is"):
            est = _simulate_query(q, source, reps, rng, template, tilts)
            p = est.p_hat
            lo, hi = est.ci_log
            if lo > 0:
                band = (-math.log(hi) / q.n - ref, -math.log(lo) / q.n - ref)
        else:
            raise ValueError(f"unknown probability source {source!r}")
        if not p > 0:
            warnings.warn(f"n={q.n}: zero probability observed, excluded", RuntimeWarning,
                          stacklevel=2)
            excluded.append(q.n)
            continue
        val = -math.log(p) / q.n
        rows.append(SlopeRow(q.n, p, val, ref, abs(val - ref), band))
    gaps = [r.gap for r in rows]
    decreasing = len(gaps) >= 2 and all(b < a for a, b in zip(gaps, gaps[1:]))
    if len(rows) >= 2:
        ns = np.array([r.n for r in rows], dtype=float)
        fitted = float(np.polyfit(ns, [r.neg_log_p_over_n * r.n for r in rows], 1)[0])
    else:
        fitted = math.nan
    return SlopeReport(tuple(rows), tuple(excluded), decreasing, fitted)


def _simulate_query(q: TailQuery, source: str, reps: int, rng, template, tilts) -> McEstimate:
    spec = _spec(rng).child(q.n)
    if q.direction == "le":
        if source == "mc":
            return mc_os_tail(q.n, q.t, q.threshold, reps, spec)
        x = q.threshold
        th3 = (q.t - x) / (1.0 - x)
        th1 = -(q.t - x) / x
        if tilts is not None:
            th1, th3 = tilts
        return is_os_tail(q.n, q.t, x, th1, th3, reps, spec)
    if template is None:
        raise ValueError("workload queries need a template")
    tmpl = QueueTemplate(q.n, template.arrival, template.service)
    if source == "mc":
        return mc_workload_tail(tmpl, q.t, q.threshold, reps, spec)
    choice = heuristic_tilts(q.t, q.threshold, template.service)
    th1, th2 = tilts if tilts is not None else (choice.theta1, choice.theta2)
    return is_workload_tail(tmpl, q.t, q.threshold, th1, th2, reps, spec, theta3=choice.theta3)
