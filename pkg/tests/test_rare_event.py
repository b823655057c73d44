import math
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsgi1.rare_event import (
    QueueTemplate,
    TailQuery,
    binomial_tail,
    exact_os_tail,
    exact_workload_tail,
    heuristic_tilts,
    is_os_tail,
    is_workload_tail,
    job_index,
    ldp_slope,
    mc_os_tail,
    mc_workload_tail,
    wilson_interval,
)
from rsgi1.rate_pointwise import rate_os
from rsgi1.stochastic_core import ArrivalModel, Deterministic, Empirical, Exponential, RngSpec

BIN_10_03_GE5 = 0.150268332600000  # sum_{j>=5} C(10,j) .3^j .7^(10-j)
LOG_BIN_2000 = -177.821999263220617
I_HALF_03 = 0.0871766935723888763
TWO_ATOMS = Empirical((0.5, 2.5), (0.6, 0.4))
UNIFORM = ArrivalModel.uniform()


def small_queue(n, service=TWO_ATOMS):
    return QueueTemplate(n, UNIFORM, service)


def test_job_index_guards_rounding():
    assert job_index(10, 0.3) == 3
    assert job_index(100, 0.29) == 29
    assert job_index(20, 0.7) == 14


def test_os_tail_small_binomial():
    assert exact_os_tail(10, 0.5, 0.3).p == pytest.approx(0.1502683326, rel=1e-9)


def test_os_tail_log_value_large_n():
    r = exact_os_tail(2000, 0.5, 0.3)
    assert r.log_p == pytest.approx(LOG_BIN_2000, rel=1e-12)
    assert abs(-r.log_p / 2000 - I_HALF_03) <= 0.03 * I_HALF_03


def test_os_tail_trivial_cases():
    assert exact_os_tail(10, 0.5, 1.0).p == 1.0
    assert exact_os_tail(10, 0.05, 0.2).p == 1.0  # T_(0) = 0
    assert exact_os_tail(10, 0.5, 0.0).p == 0.0


@given(st.integers(1, 300), st.floats(0.01, 0.99), st.floats(0.01, 1.0))
def test_summation_orders_agree(n, a, t):
    k = job_index(n, t)
    up = binomial_tail(n, a, k, "upper").p
    lo = binomial_tail(n, a, k, "lower").p
    assert up == pytest.approx(lo, abs=1e-12)


def test_os_tail_matches_scipy_survival():
    from scipy.stats import binom

    for n, t, a in [(50, 0.4, 0.2), (300, 0.1, 0.15), (7, 1.0, 0.9)]:
        k = job_index(n, t)
        assert exact_os_tail(n, t, a).p == pytest.approx(binom.sf(k - 1, n, a), rel=1e-12)


def test_exchangeability_sort_sampler_matches_oracle():
    exact = exact_os_tail(50, 0.5, 0.4).p
    est = mc_os_tail(50, 0.5, 0.4, 100_000, RngSpec(7))
    assert abs(est.p_hat - exact) <= 3 * est.std_error


def test_os_importance_sampling_matches_oracle():
    n, t, a = 200, 0.5, 0.3
    exact = exact_os_tail(n, t, a).p
    est = is_os_tail(n, t, a, -(t - a) / a, (t - a) / (1 - a), 50_000, RngSpec(3))
    assert abs(est.p_hat - exact) <= 4 * est.std_error
    assert est.relative_half_width < 0.1


def test_two_point_hand_oracle():
    # W_2 > w  iff  nu_1/2 - w exceeds the gap between the two epochs
    c = {0.5: 0.25 - 0.1, 2.5: 1.25 - 0.1}
    hand = sum(p * (1 - (1 - min(c[v], 1.0)) ** 2) for v, p in ((0.5, 0.6), (2.5, 0.4)))
    assert hand == pytest.approx(0.5665, abs=1e-12)
    assert exact_workload_tail(2, 1.0, 0.1, TWO_ATOMS) == pytest.approx(hand, abs=1e-12)


def test_deterministic_enumeration_matches_simulation():
    q = small_queue(6, Deterministic(1.5))
    exact = exact_workload_tail(6, 1.0, 0.3, q.service)
    est = mc_workload_tail(q, 1.0, 0.3, 200_000, RngSpec(11))
    assert 0 < exact < 1
    assert abs(est.p_hat - exact) <= 4 * est.std_error


def test_naive_workload_trivial_thresholds():
    q = small_queue(20, Deterministic(1.0))
    assert mc_workload_tail(q, 0.5, -1.0, 500, RngSpec(0)).p_hat == 1.0
    assert mc_workload_tail(q, 0.5, 1.01, 500, RngSpec(0)).p_hat == 0.0


def test_naive_requires_enough_replications():
    with pytest.raises(ValueError):
        mc_workload_tail(small_queue(5), 0.5, 0.1, 50, RngSpec(0))


def test_zero_tilts_bit_identical_to_naive():
    q = small_queue(30, Exponential.with_mean(1.1))
    naive = mc_workload_tail(q, 0.6, 0.2, 30_000, RngSpec(5), method="expo-ratio")
    tilted = is_workload_tail(q, 0.6, 0.2, 0.0, 0.0, 30_000, RngSpec(5))
    assert naive.p_hat == tilted.p_hat
    assert naive.variance == tilted.variance
    assert naive.hits == tilted.hits


def test_likelihood_ratio_has_unit_mean():
    q = small_queue(50, Exponential.with_mean(1.2))
    tilts = heuristic_tilts(0.5, 0.6, q.service)
    # w = -1 makes every indicator one, so the estimate is the LR sample mean
    est = is_workload_tail(q, 0.5, -1.0, tilts.theta1, tilts.theta2, 100_000, RngSpec(9),
                           theta3=tilts.theta3)
    assert abs(est.p_hat - 1.0) <= 3 * est.std_error
    assert est.info["lr_mean"] == pytest.approx(est.p_hat, rel=1e-12)


def test_importance_sampling_matches_enumeration():
    q = small_queue(8)
    for w in (0.1, 0.5):
        exact = exact_workload_tail(8, 0.75, w, q.service)
        tilts = heuristic_tilts(0.75, w, q.service)
        est = is_workload_tail(q, 0.75, w, tilts.theta1, tilts.theta2, 200_000, RngSpec(2),
                               theta3=tilts.theta3)
        assert abs(est.p_hat - exact) <= 4 * est.std_error


def test_naive_and_tilted_agree_at_moderate_rarity():
    q = small_queue(50, Exponential.with_mean(1.2))
    naive = mc_workload_tail(q, 0.5, 0.6, 200_000, RngSpec(1))
    tilts = heuristic_tilts(0.5, 0.6, q.service)
    tilted = is_workload_tail(q, 0.5, 0.6, tilts.theta1, tilts.theta2, 50_000, RngSpec(2),
                              theta3=tilts.theta3)
    assert 2e-4 < naive.p_hat < 5e-3
    combined = math.hypot(naive.std_error, tilted.std_error)
    assert abs(naive.p_hat - tilted.p_hat) <= 3 * combined


def test_tilting_reduces_variance_for_rare_target():
    q = small_queue(100, Exponential.with_mean(1.2))
    w = 0.58
    reps = 100_000
    tilts = heuristic_tilts(0.5, w, q.service)
    tilted = is_workload_tail(q, 0.5, w, tilts.theta1, tilts.theta2, reps, RngSpec(4),
                              theta3=tilts.theta3)
    naive = mc_workload_tail(q, 0.5, w, reps, RngSpec(4))
    assert 1e-6 < tilted.p_hat < 1e-4
    assert tilted.relative_half_width < naive.relative_half_width
    factor = tilted.p_hat * (1 - tilted.p_hat) / tilted.variance
    assert factor > 1.0


def test_tilt_validation():
    q = small_queue(10, Exponential(1.0))
    with pytest.raises(ValueError):
        is_workload_tail(q, 0.5, 0.1, 1.0, 0.0, 100, RngSpec(0))
    with pytest.raises(ValueError):
        is_workload_tail(q, 0.5, 0.1, 0.0, 1.5, 100, RngSpec(0))
    with pytest.raises(ValueError):
        is_os_tail(10, 0.5, 0.3, 0.2, 1.0, 100, RngSpec(0))


def test_heuristic_tilts_point_at_target():
    c = heuristic_tilts(0.5, 0.3, Exponential(1.0))
    assert c.theta1 < 0 < c.theta3 < 1
    assert Exponential(1.0).tilt(c.theta2).mean == pytest.approx(c.service_target / 0.5)
    # tilted mean of T_(k) with the split tilt sits at the arrival target
    k_share = 0.5 / (1 - c.theta1)
    rest = 0.5 / (1 - c.theta3)
    assert k_share / (k_share + rest) == pytest.approx(c.arrival_target, rel=1e-9)


def test_reproducible_with_same_stream():
    q = small_queue(20, Exponential(0.9))
    a = mc_workload_tail(q, 0.7, 0.1, 5_000, RngSpec(42))
    b = mc_workload_tail(q, 0.7, 0.1, 5_000, 42)
    assert a == b


@settings(max_examples=25)
@given(st.integers(1, 40), st.floats(0.1, 1.0), st.floats(-0.1, 0.5), st.integers(0, 1000))
def test_estimate_invariants(n, t, w, seed):
    q = small_queue(n, Exponential(1.0))
    est = mc_workload_tail(q, t, w, 400, RngSpec(seed))
    assert 0.0 <= est.p_hat <= 1.0
    assert est.variance >= 0.0
    assert est.ci[0] <= est.p_hat <= est.ci[1]
    assert est.ci_method == ("wilson" if est.hits < 30 else "normal")


@given(st.integers(0, 200), st.integers(1, 200))
def test_wilson_interval_contains_proportion(hits, reps):
    hits = min(hits, reps)
    lo, hi = wilson_interval(hits, reps)
    assert 0.0 <= lo <= hits / reps <= hi <= 1.0


def test_tail_query_validation():
    with pytest.raises(ValueError):
        TailQuery(0, 0.5, 0.3)
    with pytest.raises(ValueError):
        TailQuery(10, 0.5, 0.3, direction="ge")


def test_slope_report_exact_gaps_decrease():
    qs = [TailQuery(n, 0.5, 0.3) for n in (100, 500, 2000, 5000)]
    rep = ldp_slope(qs, "exact")
    assert rep.strictly_decreasing
    assert rep.rows[-1].gap <= 0.03 * I_HALF_03
    assert all(r.rate_ref == pytest.approx(rate_os(0.5, 0.3).value) for r in rep.rows)


def test_slope_report_constant_source_has_zero_slope():
    qs = [TailQuery(n, 0.5, 0.3) for n in (10, 20, 40, 80)]
    rep = ldp_slope(qs, lambda q: 0.25, rate_ref=0.0)
    assert rep.fitted_slope == pytest.approx(0.0, abs=1e-12)
    assert [r.neg_log_p_over_n for r in rep.rows] == pytest.approx(
        [math.log(4) / n for n in (10, 20, 40, 80)])


def test_slope_report_simulation_bands_cover_exact_gap():
    qs = [TailQuery(n, 0.5, 0.4) for n in (20, 40, 80)]
    rep = ldp_slope(qs, "mc", reps=100_000, rng=RngSpec(12))
    for row in rep.rows:
        exact = -exact_os_tail(row.n, 0.5, 0.4).log_p / row.n - row.rate_ref
        lo, hi = row.gap_band
        assert lo <= exact <= hi


def test_slope_report_excludes_zero_probabilities():
    qs = [TailQuery(n, 0.5, 0.3) for n in (10, 20, 40, 80)]
    with pytest.warns(RuntimeWarning, match="n=40"):
        rep = ldp_slope(qs, lambda q: 0.0 if q.n == 40 else 0.1)
    assert rep.excluded == (40,)
    assert [r.n for r in rep.rows] == [10, 20, 80]


def test_slope_report_needs_three_sizes():
    with pytest.raises(ValueError):
        ldp_slope([TailQuery(10, 0.5, 0.3), TailQuery(20, 0.5, 0.3)])


def test_slope_report_on_workload_family():
    qs = [TailQuery(n, 0.75, 0.3, "gt") for n in (4, 6, 8)]
    rep = ldp_slope(qs, "exact", rate_ref=0.0, template=small_queue(4))
    assert len(rep.rows) == 3 and not rep.excluded
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert all(0 < r.p < 1 for r in rep.rows)
