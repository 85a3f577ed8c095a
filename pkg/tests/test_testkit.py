import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from generic_holdout.core import ConstantLoss, Dataset, GlobalNull, RngStream, Sample, sample_dataset
from generic_holdout.errors import DomainError, EmptyDataError, NormError, RangeError
from generic_holdout.testkit import (
    BudgetSpec,
    CalibrationTable,
    CorrelationTest,
    GappedLossTest,
    binomial_upper_bound,
    calibrate_correlation_null,
    evaluate_gapped_test,
    hoeffding_p_bound,
    make_correlation_test,
    make_linear_loss,
    per_test_alpha,
    required_holdout_size,
)

from conftest import make_dataset

E1 = np.array([1.0, 0.0, 0.0])


# --- losses --------------------------------------------------------------------


def test_linear_loss_examples():
    assert make_linear_loss(E1)(Sample([0.2, 5.0, -1.0], 1.0)) == pytest.approx(0.2)
    assert make_linear_loss(E1)(Sample([3.0, 0.0, 0.0], 1.0)) == 1.0
    w = np.array([1.0, 1.0]) / math.sqrt(2)
    assert make_linear_loss(w)(Sample([1.0, 1.0], -1.0)) == -1.0


def test_linear_loss_needs_unit_vector():
    with pytest.raises(NormError):
        make_linear_loss([0.5, 0.5])


# --- gapped tests ----------------------------------------------------------------


def test_constant_loss_accepts():
    ds = sample_dataset(GlobalNull(2), 7, RngStream(1))
    assert evaluate_gapped_test(GappedLossTest(ConstantLoss(1.0)), ds) == 1


def test_boundary_is_strict():
    ds = sample_dataset(GlobalNull(2), 7, RngStream(1))
    assert evaluate_gapped_test(GappedLossTest(ConstantLoss(0.5), 0.5), ds) == 0


def test_gapped_null_rejects():
    ds = sample_dataset(GlobalNull(3), 200, RngStream(5))
    assert evaluate_gapped_test(GappedLossTest(make_linear_loss(E1)), ds) == 0


def test_gapped_empty_data():
    with pytest.raises(EmptyDataError):
        evaluate_gapped_test(GappedLossTest(ConstantLoss(1.0)), Dataset.empty(3))


def test_gapped_test_rejects_bad_threshold():
    with pytest.raises(RangeError):
        GappedLossTest(ConstantLoss(1.0), threshold=1.0)


def test_digest_depends_on_content_only():
    a = GappedLossTest(make_linear_loss(E1), label="x")
    b = GappedLossTest(make_linear_loss(E1.copy()), label="x")
    c = GappedLossTest(make_linear_loss(-E1), label="x")
    assert a.digest == b.digest != c.digest
    assert len(a.digest) == 64


# --- Hoeffding and sizing ---------------------------------------------------------


@pytest.mark.parametrize("h,expected", [(0, 1.0), (8, math.exp(-1)), (184, math.exp(-23))])
def test_hoeffding_values(h, expected):
    assert hoeffding_p_bound(h, 0.5, 2.0) == pytest.approx(expected, rel=1e-12)


def test_hoeffding_known_decimals():
    assert hoeffding_p_bound(8, 0.5, 2) == pytest.approx(0.367879, abs=1e-6)
    assert hoeffding_p_bound(184, 0.5, 2) == pytest.approx(1.026e-10, rel=1e-3)


@given(h=st.integers(0, 5000))
def test_hoeffding_monotone_in_h(h):
    assert hoeffding_p_bound(h + 1, 0.5, 2.0) <= hoeffding_p_bound(h, 0.5, 2.0)


def _brute_size(s, k, p0):
    # oracle: exact rational alpha, scan h upward in log space
    log_alpha = math.log(Fraction(p0) / s**k) if s**k < 10**300 else math.log(p0) - k * math.log(s)
    h = 0
    while -h / 8 > log_alpha + 1e-12:
        h += 1
    return h


@pytest.mark.parametrize(
    "s,k,p0,expected",
    [(1, 1, math.exp(-1), 8), (1000, 1, 0.05, 80), (2**20, 2, 0.05, 246), (50, 2, 0.05, 87), (100, 1, 0.05, 61)],
)
def test_required_holdout_size(s, k, p0, expected):
    assert required_holdout_size(s, k, p0) == expected
    assert _brute_size(s, k, p0) == expected


@given(s=st.integers(1, 10**6), k=st.integers(1, 4), p0=st.floats(1e-6, 0.5))
def test_required_size_is_minimal(s, k, p0):
    if k > s:
        return
    h = required_holdout_size(s, k, p0)
    alpha = per_test_alpha(s, k, p0)
    assert hoeffding_p_bound(h, 0.5, 2) <= alpha or alpha == 0.0
    if h > 0 and alpha > 0.0:
        assert hoeffding_p_bound(h - 1, 0.5, 2) > alpha


@pytest.mark.parametrize("s,k,p0", [(0, 1, 0.05), (3, 4, 0.05), (10, 1, 0.0), (10, 1, 1.0)])
def test_required_size_domain(s, k, p0):
    with pytest.raises(DomainError):
        required_holdout_size(s, k, p0)


@pytest.mark.parametrize("s,k,p0,expected", [(100, 1, 0.05, 5e-4), (1, 1, 0.05, 0.05), (1000, 2, 0.01, 1e-8)])
def test_per_test_alpha(s, k, p0, expected):
    assert per_test_alpha(s, k, p0) == pytest.approx(expected, rel=1e-15)


def test_per_test_alpha_extreme_budget_does_not_raise():
    a = per_test_alpha(2**63, 64, 0.05)
    assert a == 0.0
    assert per_test_alpha(2**63, 64, 0.05, exact=True) > 0


def test_budget_spec_admits():
    b = BudgetSpec(1000, 1, 0.05)
    assert b.alpha == pytest.approx(5e-5)
    assert b.admits(hoeffding_p_bound(80, 0.5, 2))
    assert not b.admits(hoeffding_p_bound(79, 0.5, 2))
    assert BudgetSpec(0, 0, 0.05).alpha == 0.05


# --- correlation tests -----------------------------------------------------------


def test_correlation_accepts_large_statistic():
    t = make_correlation_test([1.0], 1.0)
    ds = make_dataset([[3.0]], [1.0])
    assert t.statistic(ds) == 3.0 and t.evaluate(ds) == 1


def test_correlation_null_rejects():
    ds = sample_dataset(GlobalNull(1), 100, RngStream(2))
    assert make_correlation_test([1.0], 1.0).evaluate(ds) == 0


def test_correlation_boundary_strict():
    ds = make_dataset([[2.0], [-2.0]], [1.0, 1.0])
    t = make_correlation_test([1.0], 0.0)
    assert t.statistic(ds) == 0.0 and t.evaluate(ds) == 0


def test_correlation_loss_is_untruncated():
    t = CorrelationTest([1.0], 1.0)
    assert t.loss.hi == math.inf


def _product_normal_tail(t):
    # P(N N' > t) = 2 * int_0^inf phi(x) * Q(t/x) dx
    f = lambda x: stats.norm.pdf(x) * stats.norm.sf(t / x)
    val, _ = integrate.quad(f, 0, np.inf, limit=200)
    return 2 * val


def test_calibration_n1_matches_product_normal_tail():
    table = calibrate_correlation_null(1, d=1, R=100_000, rng=RngStream(17))
    exact = _product_normal_tail(1.0)
    # second route: N N' = (U^2 - V^2) / 2 with U, V iid standard normal
    g = lambda v: stats.chi2.sf(2.0 + v, 1) * stats.chi2.pdf(v, 1)
    alt, _ = integrate.quad(g, 0, np.inf, limit=200)
    assert exact == pytest.approx(alt, rel=1e-6)
    assert exact == pytest.approx(0.1045, abs=1e-4)
    p_hat = table.entries[1].p_hat
    sigma = math.sqrt(exact * (1 - exact) / 100_000)
    assert abs(p_hat - exact) <= 4 * sigma


def test_calibration_n400_sees_nothing():
    table = calibrate_correlation_null([400], d=1, R=100_000, rng=RngStream(3))
    entry = table.entries[400]
    assert entry.p_hat == 0.0
    assert entry.upper <= 5e-5


@given(hits=st.integers(0, 1000), extra=st.integers(0, 1000))
def test_upper_bound_contains_point(hits, extra):
    trials = hits + extra
    if trials == 0:
        return
    assert binomial_upper_bound(hits, trials) >= hits / trials


def test_calibration_small_R_rejected():
    with pytest.raises(DomainError):
        calibrate_correlation_null(5, d=1, R=100, rng=RngStream(0))


def test_calibration_json_round_trip():
    table = calibrate_correlation_null([2, 5], d=3, R=10_000, rng=RngStream(4))
    blob = json.loads(json.dumps(table.to_json()))
    assert CalibrationTable.from_json(blob) == table


def test_calibration_is_deterministic():
    a = calibrate_correlation_null([3], d=1, R=10_000, rng=RngStream(8))
    b = calibrate_correlation_null([3], d=1, R=10_000, rng=RngStream(8))
    assert a == b


def test_correlation_bound_uses_table():
    table = calibrate_correlation_null([400], d=1, R=100_000, rng=RngStream(3))
    t = CorrelationTest([1.0], 1.0)
    assert t.false_positive_bound(400, table) == table.entries[400].upper
    assert t.false_positive_bound(401, table) == 1.0
    assert t.false_positive_bound(400, None) == 1.0
