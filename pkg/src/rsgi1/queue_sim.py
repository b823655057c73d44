"""Finite-population paths of the RS/GI/1 queue and their fluid limit.

Index conventions: job ``j`` (1-based) arrives at ``T_(j)`` with work
``nu_j``; ``T_(0) = 0`` and ``nu_0 = 0``.  Services are accelerated by
``1/n`` so that all paths live on ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stochastic_core import (
    ArrivalModel,
    RngLike,
    ServiceModel,
    as_generator,
    sample_uniform_order_stats,
)

__all__ = [
    "SamplePath",
    "QueueRealization",
    "simulate",
    "arrival_path",
    "service_path",
    "offered_load_path",
    "workload_path",
    "lindley_workload",
    "max_representation_workload",
    "reflect",
    "reflect_values",
    "interpolate",
    "sup_distance",
    "fluid_offered_load",
    "fluid_workload",
]


@dataclass(frozen=True)
class SamplePath:
    """Values on a grid in [0, 1].

    ``kind='step'`` is right-continuous (constant on ``[g_k, g_{k+1})``);
    ``kind='linear'`` interpolates linearly between grid values.
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str = "step"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size == 0:
            raise ValueError("grid and values must be equal-length 1-d arrays")
        if g[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.kind not in ("step", "linear"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s > self.grid[-1]):
            raise ValueError("evaluation point outside the path's grid")
        if self.kind == "linear":
            out = np.interp(s, self.grid, self.values)
        else:
            idx = np.searchsorted(self.grid, s, side="right") - 1
            out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "linear":
            out = np.interp(s, self.grid, self.values)
        else:
            idx = np.maximum(np.searchsorted(self.grid, s, side="left") - 1, 0)
            out = np.where(s == 0.0, self.values[0], self.values[idx])
        return float(out) if np.ndim(out) == 0 else out

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class QueueRealization:
    """One population of n jobs: sorted epochs and (unscaled) services."""

    epochs: np.ndarray
    services: np.ndarray
    check_positive: bool = True

    def __post_init__(self):
        t = np.asarray(self.epochs, dtype=float)
        v = np.asarray(self.services, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("epochs and services must be equal-length nonempty vectors")
        if np.any(np.diff(t) < 0):
            raise ValueError("arrival epochs must be sorted")
        if np.any(t < 0):
            raise ValueError("arrival epochs must be nonnegative")
        if self.check_positive and np.any(v <= 0):
            raise ValueError("services must be strictly positive")
        object.__setattr__(self, "epochs", t)
        object.__setattr__(self, "services", v)

    @property
    def n(self) -> int:
        return self.epochs.size

    @property
    def scaled_services(self) -> np.ndarray:
        return self.services / self.n

    @property
    def padded_epochs(self) -> np.ndarray:
        """``T_(0..n)`` with ``T_(0) = 0``."""
        return np.concatenate(([0.0], self.epochs))

    @property
    def cumulative_service(self) -> np.ndarray:
        """``S^n_j = sum_{i<=j} nu_i / n`` for ``j = 0..n``."""
        return np.concatenate(([0.0], np.cumsum(self.scaled_services)))

    @property
    def spacings(self) -> np.ndarray:
        """``T_(j) - T_(j-1)`` for ``j = 1..n``."""
        return np.diff(self.padded_epochs)


def simulate(n: int, arrival: ArrivalModel, service: ServiceModel, rng: RngLike = None,
             method: str = "sort") -> QueueRealization:
    g = as_generator(rng)
    u = sample_uniform_order_stats(n, method, g)
    return QueueRealization(arrival.epochs(u), service.sample(n, g))


def _job_grid(n: int) -> np.ndarray:
    return np.arange(n + 1) / n


def arrival_path(q: QueueRealization) -> SamplePath:
    """``T^n(t) = T_(floor(nt))`` as a step path."""
    return SamplePath(_job_grid(q.n), q.padded_epochs, "step")


def service_path(q: QueueRealization) -> SamplePath:
    return SamplePath(_job_grid(q.n), q.cumulative_service, "step")


def offered_load_path(q: QueueRealization) -> SamplePath:
    """``X^n = S^n - T^n``; the arriving job's work counts at its arrival."""
    return SamplePath(_job_grid(q.n), q.cumulative_service - q.padded_epochs, "step")


def lindley_workload(q: QueueRealization) -> np.ndarray:
    """Workload found by each arrival, ``W_0..W_n``, by the Lindley recursion."""
    nu = np.concatenate(([0.0], q.scaled_services))
    gaps = q.spacings
    w = np.zeros(q.n + 1)
    for j in range(1, q.n + 1):
        w[j] = max(w[j - 1] + nu[j - 1] - gaps[j - 1], 0.0)
    return w


def max_representation_workload(epochs: np.ndarray, scaled_services: np.ndarray) -> np.ndarray:
    """Unraveled recursion, vectorized over leading axes.

    ``W_j = (S_{j-1} - T_(j)) + max_{0<=i<=j-1} (T_(i+1) - S_i)`` with
    ``W_0 = 0``.  Inputs have shape ``(..., n)``; output ``(..., n + 1)``.
    """
    epochs = np.asarray(epochs, dtype=float)
    nu = np.asarray(scaled_services, dtype=float)
    lead = epochs.shape[:-1]
    zero = np.zeros(lead + (1,))
    s = np.concatenate((zero, np.cumsum(nu, axis=-1)), axis=-1)  # S_0..S_n
    # term_i = T_(i+1) - S_i for i = 0..n-1
    run = np.maximum.accumulate(epochs - s[..., :-1], axis=-1)
    w = (s[..., :-1] - epochs) + run
    return np.concatenate((zero, w), axis=-1)


def workload_path(q: QueueRealization) -> SamplePath:
    """``W^n(t) = W_{floor(nt)}`` as a step path."""
    return SamplePath(_job_grid(q.n), lindley_workload(q), "step")


def reflect_values(values: np.ndarray) -> np.ndarray:
    """Regulator on grid values: ``x_k - min(x_0..x_k)``, along the last axis."""
    values = np.asarray(values, dtype=float)
    return values - np.minimum.accumulate(values, axis=-1)


def reflect(x: SamplePath) -> SamplePath:
    """Skorokhod regulator ``x(t) + max_{s<=t} (-x(s))``.

    For step paths the result lives on the same grid.  For linear paths
    the points where ``x`` crosses below its running minimum are inserted
    so that the result is exact between grid points.
    """
    if x.kind == "step":
        return SamplePath(x.grid, reflect_values(x.values), "step")
    g, v = x.grid, x.values
    out_g, out_v = [g[0]], [0.0]
    low = v[0]
    for k in range(1, g.size):
        a, b = v[k - 1], v[k]
        if b < low:
            if a > low:
                c = g[k - 1] + (g[k] - g[k - 1]) * (a - low) / (a - b)
                if out_g[-1] < c < g[k]:
                    out_g.append(c)
                    out_v.append(0.0)
            low = b
        out_g.append(g[k])
        out_v.append(b - low)
    return SamplePath(np.array(out_g), np.array(out_v), "linear")


def interpolate(x: SamplePath) -> SamplePath:
    """Linear interpolation between the jump levels of a step path."""
    if x.kind != "step":
        raise ValueError("interpolate expects a step path")
    return SamplePath(x.grid, x.values, "linear")


def sup_distance(a: SamplePath, b: SamplePath) -> float:
    """Sup-norm distance between two paths on a common horizon.

    Both paths are piecewise linear (or constant) between points of the
    merged grid, so the supremum is attained at a merged grid point or
    as a left limit there.
    """
    if a.grid[-1] != b.grid[-1]:
        raise ValueError("paths must share the same horizon")
    g = np.union1d(a.grid, b.grid)
    d_at = np.abs(a(g) - b(g))
    d_left = np.abs(a.left_limit(g) - b.left_limit(g))
    return float(max(d_at.max(), d_left.max()))


def fluid_offered_load(mu: float, grid=None) -> SamplePath:
    """Fluid offered load ``t / mu - t`` for uniform arrivals."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    g = np.linspace(0.0, 1.0, 1001) if grid is None else np.asarray(grid, dtype=float)
    return SamplePath(g, g / mu - g, "linear")


def fluid_workload(arrival: ArrivalModel, mu: float, grid=None) -> SamplePath:
    """Fluid workload ``(1/mu) * Gamma(F - M)`` with ``M(t) = mu t``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    g = np.linspace(0.0, 1.0, 1001) if grid is None else np.asarray(grid, dtype=float)
    netput = np.asarray(arrival.cdf(g), dtype=float) - mu * g
    return SamplePath(g, reflect_values(netput) / mu, "linear")
