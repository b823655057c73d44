"""Safeguarded one-dimensional searches shared by the rate evaluators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Search1D:
    x: float
    value: float
    iterations: int
    width: float


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 500) -> Search1D:
    """Maximize a unimodal ``f`` on ``[lo, hi]``.

    Ties between the two interior probes keep the left part of the
    bracket, so a plateau resolves to its leftmost point.  The returned
    point is the best of the final probes and the two end points.
    """
    if not lo <= hi:
        raise ValueError(f"empty bracket [{lo}, {hi}]")
    a, b = lo, hi
    x1 = b - INVPHI * (b - a)
    x2 = a + INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INVPHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INVPHI * (b - a)
            f2 = f(x2)
    best_x, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    for x in (lo, hi):
        fx = f(x)
        if fx > best_f:
            best_x, best_f = x, fx
    return Search1D(best_x, best_f, it, b - a)


def golden_section_min(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 500) -> Search1D:
    res = golden_section_max(lambda x: -f(x), lo, hi, tol, max_iter)
    return Search1D(res.x, -res.value, res.iterations, res.width)


def bracket_concave_max(f: Callable[[float], float], start: float, direction: float,
                        limit: float, step: float = 1.0,
                        cap: float = 1e8) -> tuple[float, float, bool]:
    """Grow a bracket from ``start`` in ``direction`` (+1 or -1).

    ``limit`` is the (possibly infinite) edge of the admissible region
    in that direction.  Returns ``(near, far, bounded)`` with the
    maximizer of the concave ``f`` inside ``[min, max]`` of the pair;
    ``bounded`` is False when ``f`` kept increasing up to ``cap``.
    """
    xs, fs = [start], [f(start)]
    while True:
        nxt = xs[-1] + direction * step
        near = xs[-2] if len(xs) > 1 else start
        if (nxt - limit) * direction >= 0:
            return near, limit, True
        f_nxt = f(nxt)
        if f_nxt < fs[-1]:
            return near, nxt, True
        if abs(nxt - start) >= cap:
            return xs[-1], nxt, False
        xs.append(nxt)
        fs.append(f_nxt)
        step *= 2.0
