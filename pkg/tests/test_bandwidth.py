import math

import pytest

from rsgi1.bandwidth import BandwidthQuery, BandwidthRow, critical_time, rate_table, rate_tail
from rsgi1.rate_path import UPPER_BOUND_ONLY, PathOptimizerConfig, fluid_workload_value
from rsgi1.stochastic_core import Exponential

EXP1 = Exponential(1.0)
COARSE = PathOptimizerConfig(m=50, multistart=2)
GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)


def test_rate_zero_below_fluid_workload():
    model = Exponential.with_mean(1.5)
    assert fluid_workload_value(0.6, 1.5) == pytest.approx(0.3)
    assert rate_tail(0.6, 0.2, model, COARSE).value == 0.0


def test_rate_zero_at_empty_buffer_when_overloaded():
    for t in (0.2, 0.5, 1.0):
        assert rate_tail(t, 0.0, Exponential.with_mean(1.25), COARSE).value == 0.0


def test_rate_consistent_across_refinement():
    a = rate_tail(0.5, 0.3, EXP1, PathOptimizerConfig(m=100)).value
    b = rate_tail(0.5, 0.3, EXP1, PathOptimizerConfig(m=200)).value
    assert 0 < b < math.inf
    assert abs(a - b) <= 0.05 * b


def test_rate_tail_rejects_negative_buffer():
    with pytest.raises(ValueError):
        rate_tail(0.5, -0.1, EXP1)


@pytest.mark.parametrize("kwargs", [
    dict(t_grid=()),
    dict(t_grid=(0.5, 0.3)),
    dict(t_grid=(0.0, 0.5)),
    dict(t_grid=(0.5, 1.2)),
    dict(p=0.0),
    dict(p=1.5),
    dict(w=-1.0),
    dict(n=0),
])
def test_query_validation(kwargs):
    base = dict(w=0.3, p=0.1, n=100, t_grid=(0.5,), model=EXP1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        BandwidthQuery(**base)


@pytest.fixture(scope="module")
def table():
    return rate_table(GRID, 0.3, 200, EXP1, COARSE)


def test_target_one_met_at_first_point(table):
    q = BandwidthQuery(0.3, 1.0, 200, GRID, EXP1, COARSE)
    assert critical_time(q, table).t_star == GRID[0]


def test_critical_time_nonincreasing_in_target(table):
    stars = [critical_time(BandwidthQuery(0.3, p, 200, GRID, EXP1, COARSE), table).t_star
             for p in (1e-3, 1e-2, 1e-1, 1.0)]
    assert all(b <= a for a, b in zip(stars, stars[1:]))


def test_table_rows_nonnegative_with_small_residual(table):
    for row in table:
        assert row.rate >= 0
        assert row.bound == pytest.approx(math.exp(-200 * row.rate))
        assert row.residual < 1e-6 or UPPER_BOUND_ONLY in row.flags


def test_large_population_picks_first_positive_rate():
    model = Exponential.with_mean(1.2)
    grid = (0.2, 0.5, 0.8)
    # fluid workload is 0.04, 0.1, 0.16: w = 0.12 is exceeded by the fluid path at t = 0.8
    tab = rate_table(grid, 0.12, 10**6, model, COARSE)
    assert [r.rate > 0 for r in tab] == [True, True, False]
    ct = critical_time(BandwidthQuery(0.12, 1e-6, 10**6, grid, model, COARSE), tab)
    assert ct.t_star == 0.2


def test_no_crossing_sentinel():
    rows = (BandwidthRow(0.5, 0.0, 1.0, 0.0), BandwidthRow(1.0, 0.0, 1.0, 0.0))
    ct = critical_time(BandwidthQuery(0.3, 0.5, 10, (0.5, 1.0), EXP1), rows)
    assert ct.t_star == math.inf and not ct.crossed
    assert ct.first_violation == 0.5


def test_bound_nonincreasing_in_buffer():
    for t in (0.4, 0.8):
        bounds = [math.exp(-100 * rate_tail(t, w, EXP1, COARSE).value)
                  for w in (0.0, 0.05, 0.1, 0.2, 0.3, 0.4)]
        assert all(b <= a + 1e-9 for a, b in zip(bounds, bounds[1:]))


def test_critical_time_stable_across_refinement():
    grid = tuple(round(0.1 * i, 10) for i in range(1, 11))
    stars = []
    for m in (100, 200):
        q = BandwidthQuery(0.3, 1e-3, 200, grid, EXP1, PathOptimizerConfig(m=m, multistart=2))
        stars.append(critical_time(q).t_star)
    assert abs(stars[0] - stars[1]) <= 0.1 + 1e-12
