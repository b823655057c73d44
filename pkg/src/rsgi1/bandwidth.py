"""Critical time-scale for buffer exceedance from the workload rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .rate_path import UPPER_BOUND_ONLY, PathOptimizerConfig, fluid_workload_value, rate_workload
from .rate_pointwise import RateValue
from .stochastic_core import ServiceModel

__all__ = ["BandwidthQuery", "BandwidthRow", "CriticalTime", "rate_tail", "rate_table",
           "critical_time"]

EPS = 1e-6


@dataclass(frozen=True)
class BandwidthQuery:
    w: float
    p: float
    n: int
    t_grid: tuple[float, ...]
    model: ServiceModel
    cfg: PathOptimizerConfig = field(default_factory=PathOptimizerConfig)

    def __post_init__(self):
        grid = tuple(float(t) for t in self.t_grid)
        if not grid:
            raise ValueError("t-grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("t-grid must be strictly increasing")
        if not (0.0 < grid[0] and grid[-1] <= 1.0):
            raise ValueError("t-grid must lie in (0, 1]")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if self.w < 0:
            raise ValueError("buffer level must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "t_grid", grid)


def rate_tail(t: float, w: float, model: ServiceModel,
              cfg: PathOptimizerConfig | None = None, scan: int = 5) -> RateValue:
    """Rate of ``{W(t) > w}``: the infimum of the workload rate over ``y > w``.

    Below the fluid workload the infimum is 0.  Otherwise the rate is read
    at ``y = max(w, fluid) + 1e-6`` and a short scan above that point
    checks that nothing smaller turns up.
    """
    if w < 0:
        raise ValueError("w must be nonnegative")
    cfg = cfg or PathOptimizerConfig()
    w_bar = fluid_workload_value(t, model.mean)
    if w < w_bar:
        return RateValue(0.0, optimizer=None, info={"fluid_workload": w_bar, "y": w_bar})
    y0 = max(w, w_bar) + EPS
    base = rate_workload(t, y0, model, cfg)
    flags = list(base.flags)
    best, best_y = base, y0
    step = max(0.05 * y0, 1e-3)
    for j in range(1, scan):
        other = rate_workload(t, y0 + j * step, model, cfg)
        flags.extend(f for f in other.flags if f not in flags)
        if other.value < best.value - 1e-12:
            best, best_y = other, y0 + j * step
            if "scan-lower" not in flags:
                flags.append("scan-lower")
    return RateValue(best.value, optimizer=best.optimizer, iterations=best.iterations,
                     residual=best.residual, converged=UPPER_BOUND_ONLY not in flags,
                     flags=tuple(flags), info={"fluid_workload": w_bar, "y": best_y})


@dataclass(frozen=True)
class BandwidthRow:
    t: float
    rate: float
    bound: float
    residual: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class CriticalTime:
    t_star: float
    rows: tuple[BandwidthRow, ...]
    first_violation: float = math.inf

    @property
    def crossed(self) -> bool:
        return math.isfinite(self.t_star)


def rate_table(t_grid: Sequence[float], w: float, n: int, model: ServiceModel,
               cfg: PathOptimizerConfig | None = None) -> tuple[BandwidthRow, ...]:
    rows = []
    for t in t_grid:
        r = rate_tail(float(t), w, model, cfg)
        bound = math.exp(-n * r.value) if math.isfinite(r.value) else 0.0
        rows.append(BandwidthRow(float(t), r.value, bound, r.residual, r.flags))
    return tuple(rows)


def critical_time(q: BandwidthQuery, table: Sequence[BandwidthRow] | None = None) -> CriticalTime:
    """``t* = min{t in grid : exp(-n rate_t) <= p}``, ``inf`` when never met.

    The exceedance rate usually falls as ``t`` grows, so ``first_violation``
    (the earliest grid time whose bound exceeds ``p``) is reported too.
    A precomputed ``table`` for the same ``(w, n, model, cfg)`` may be
    passed to scan several targets ``p`` at once.
    """
    rows = tuple(table) if table is not None else rate_table(q.t_grid, q.w, q.n, q.model, q.cfg)
    t_star = next((r.t for r in rows if r.bound <= q.p), math.inf)
    violation = next((r.t for r in rows if r.bound > q.p), math.inf)
    return CriticalTime(t_star, rows, violation)
