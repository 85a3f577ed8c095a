import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from generic_holdout.core import (
    ConstantLoss,
    Dataset,
    GlobalNull,
    LinearLoss,
    PlantedLinear,
    RngStream,
    Sample,
    calibrate_planted_scale,
    empirical_mean_loss,
    partition,
    planted_loss_mean,
    sample_dataset,
    truncate,
)
from generic_holdout.errors import DomainError, EmptyDataError, NormError, RangeError, SizeError

from conftest import make_dataset


def e(i, d):
    v = np.zeros(d)
    v[i] = 1.0
    return v


# --- RngStream ---------------------------------------------------------------


def test_same_path_same_stream():
    a = RngStream(99, (1, 2)).generator().standard_normal(50)
    b = RngStream(99).child(1).child(2).generator().standard_normal(50)
    assert np.array_equal(a, b)


def test_distinct_paths_differ():
    a = RngStream(99, (1,)).generator().integers(0, 2**63, 8)
    b = RngStream(99, (2,)).generator().integers(0, 2**63, 8)
    assert not np.array_equal(a, b)


def test_stream_is_frozen_value():
    # pinned bits: a change in the generator or seeding scheme must show up here
    got = RngStream(2024, (0, 1)).generator().integers(0, 2**32, 3).tolist()
    assert got == RngStream(2024, (0, 1)).generator().integers(0, 2**32, 3).tolist()
    assert RngStream(5) == RngStream(5, ())


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(RangeError):
        RngStream(seed)


def test_negative_label_rejected():
    with pytest.raises(RangeError):
        RngStream(1).child(-3)


# --- datasets ----------------------------------------------------------------


def test_dataset_is_read_only():
    ds = make_dataset([[1.0, 2.0]], [3.0])
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0


def test_dataset_rejects_nonfinite_and_mismatch():
    with pytest.raises(DomainError):
        make_dataset([[np.nan]], [1.0])
    with pytest.raises(SizeError):
        Dataset(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(SizeError):
        Dataset.from_samples([Sample([1.0], 0.0), Sample([1.0, 2.0], 0.0)])


def test_samples_round_trip():
    ds = make_dataset([[1, 2], [3, 4]], [5, 6])
    again = Dataset.from_samples(ds.samples)
    assert again.equals(ds)
    assert ds[1].y == 6.0 and ds.d == 2 and len(ds) == 2


# --- sample_dataset ------------------------------------------------------------


def test_sample_empty():
    ds = sample_dataset(GlobalNull(3), 0, RngStream(1))
    assert ds.size == 0 and ds.d == 3


def test_sample_negative_n():
    with pytest.raises(SizeError):
        sample_dataset(GlobalNull(3), -1, RngStream(1))


def test_global_null_moments():
    n = 100_000
    ds = sample_dataset(GlobalNull(2), n, RngStream(7))
    cols = np.column_stack([ds.X, ds.y])
    # statistics computed independently with plain python sums over columns
    for j in range(cols.shape[1]):
        col = cols[:, j].tolist()
        mean = math.fsum(col) / n
        var = math.fsum((v - mean) ** 2 for v in col) / (n - 1)
        assert abs(mean) <= 0.02
        assert abs(var - 1.0) <= 0.03


def test_sampling_is_deterministic():
    m = PlantedLinear(4, e(2, 4), 0.6, 0.3)
    a = sample_dataset(m, 200, RngStream(3, (4,)))
    b = sample_dataset(m, 200, RngStream(3, (4,)))
    assert a.equals(b)


def test_planted_truncated_mean_hits_mu():
    m = PlantedLinear(5, e(0, 5), 0.8, 0.0)
    ds = sample_dataset(m, 100_000, RngStream(7))
    vals = np.clip(ds.y * ds.X[:, 0], -1, 1)
    assert abs(vals.mean() - 0.8) <= 0.01


@pytest.mark.parametrize("mu,sigma", [(0.8, 0.0), (0.8, 0.5), (0.55, 0.5), (0.3, 2.0)])
def test_calibration_against_monte_carlo_oracle(mu, sigma):
    # independent route: brute-force simulation of y*z, never touching the quadrature
    a = calibrate_planted_scale(mu, sigma)
    gen = np.random.default_rng(2718)
    z = gen.standard_normal(1_000_000)
    eps = gen.standard_normal(1_000_000)
    mc = np.clip((a * z + sigma * eps) * z, -1, 1).mean()
    assert abs(mc - mu) <= 4 / math.sqrt(1_000_000)


def test_planted_loss_mean_sigma_zero_closed_form_matches_quadrature_limit():
    # tiny noise should agree with the noiseless closed form
    assert planted_loss_mean(3.0, 1e-9) == pytest.approx(planted_loss_mean(3.0, 0.0), abs=1e-6)


def test_planted_mu_one_is_approached():
    m = PlantedLinear(2, e(0, 2), 1.0, 0.0)
    assert planted_loss_mean(m.scale, 0.0) > 1 - 1e-6


def test_planted_validation():
    with pytest.raises(NormError):
        PlantedLinear(2, [1.0, 1.0], 0.5)
    with pytest.raises(DomainError):
        PlantedLinear(2, e(0, 2), 0.0)
    with pytest.raises(DomainError):
        PlantedLinear(2, e(0, 2), 1.5)
    with pytest.raises(SizeError):
        PlantedLinear(3, e(0, 2), 0.5)


def test_ground_truth_labels():
    d = 3
    null = GlobalNull(d)
    planted = PlantedLinear(d, e(0, d), 0.7, 0.1)
    assert not null.hypothesis_is_true(LinearLoss(e(0, d)))
    assert planted.hypothesis_is_true(LinearLoss(e(0, d)))
    assert not planted.hypothesis_is_true(LinearLoss(-e(0, d)))
    assert not planted.hypothesis_is_true(LinearLoss(e(1, d)))
    assert null.hypothesis_is_true(ConstantLoss(0.2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_global_null_nullness(seed):
    n = 200_000
    gen = np.random.default_rng(seed)
    w = gen.standard_normal(4)
    w /= np.linalg.norm(w)
    ds = sample_dataset(GlobalNull(4), n, RngStream(seed))
    assert abs(empirical_mean_loss(LinearLoss(w), ds)) <= 4 / math.sqrt(n)


# --- partition -----------------------------------------------------------------


def _ten():
    return make_dataset(np.arange(10.0).reshape(10, 1), np.arange(10.0))


def test_partition_all_holdout():
    p = partition(_ten(), 10, RngStream(1))
    assert p.exploration.size == 0 and p.holdout.size == 10


def test_partition_no_holdout():
    p = partition(_ten(), 0, RngStream(1))
    assert p.holdout.size == 0 and p.exploration.equals(_ten())


def test_partition_out_of_range():
    with pytest.raises(SizeError):
        partition(_ten(), 11, RngStream(1))
    with pytest.raises(SizeError):
        partition(_ten(), -1, RngStream(1))


def test_partition_parts_look_like_the_source():
    src = sample_dataset(GlobalNull(2), 1000, RngStream(3))
    p = partition(src, 100, RngStream(3, (1,)))
    for part in (p.exploration, p.holdout):
        n = part.size
        assert np.all(np.abs(part.X.mean(axis=0)) <= 4 / math.sqrt(n))
        assert abs(part.y.var(ddof=1) - 1) <= 4 * math.sqrt(2 / n)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(0, 60), frac=st.floats(0, 1), seed=st.integers(0, 2**32))
def test_partition_is_a_split(n, frac, seed):
    src = make_dataset(np.arange(n, dtype=float).reshape(n, 1), np.arange(n, dtype=float))
    h = int(round(frac * n))
    p = partition(src, h, RngStream(seed))
    assert p.holdout.size == h and p.exploration.size == n - h
    hold = p.holdout.y.tolist()
    expl = p.exploration.y.tolist()
    assert sorted(hold + expl) == list(range(n))
    # order preserved within each part
    assert hold == sorted(hold) and expl == sorted(expl)
    again = partition(src, h, RngStream(seed))
    assert again.holdout.equals(p.holdout)


# --- truncate / mean loss ----------------------------------------------------------


@pytest.mark.parametrize("v,expected", [(0.3, 0.3), (-5, -1), (2.7, 1)])
def test_truncate_examples(v, expected):
    assert truncate(v, -1, 1) == expected


def test_truncate_bad_interval():
    with pytest.raises(RangeError):
        truncate(0.0, 1, -1)


@given(v=st.floats(allow_nan=False), lo=st.floats(-1e6, 1e6), width=st.floats(0, 1e6))
def test_truncate_properties(v, lo, width):
    hi = lo + width
    t = truncate(v, lo, hi)
    assert lo <= t <= hi
    assert truncate(t, lo, hi) == t


def test_mean_loss_constant():
    ds = sample_dataset(GlobalNull(3), 5, RngStream(0))
    assert empirical_mean_loss(ConstantLoss(1.0), ds) == 1.0


def test_mean_loss_symmetric_clamp():
    ds = make_dataset([[2.0], [-2.0]], [1.0, 1.0])
    assert empirical_mean_loss(LinearLoss([1.0]), ds) == 0.0


def test_mean_loss_null_is_zero():
    ds = sample_dataset(GlobalNull(1), 100_000, RngStream(11))
    assert abs(empirical_mean_loss(LinearLoss([1.0]), ds)) <= 0.01


def test_mean_loss_errors():
    with pytest.raises(EmptyDataError):
        empirical_mean_loss(ConstantLoss(0.0), Dataset.empty(2))
    with pytest.raises(SizeError):
        empirical_mean_loss(LinearLoss([1.0, 0.0, 0.0]), make_dataset([[1.0, 2.0]], [1.0]))


def test_loss_call_on_single_sample():
    assert LinearLoss([0.6, 0.8])(Sample([1.0, 1.0], 0.5)) == pytest.approx(0.7)


def test_pairwise_mean_has_no_drift():
    # 1e6 copies of 0.1: naive left-to-right accumulation drifts visibly
    vals = np.full(1_000_000, 0.1)
    ds = Dataset(np.ones((vals.size, 1)), vals)
    assert empirical_mean_loss(LinearLoss([1.0]), ds) == pytest.approx(0.1, abs=1e-15)
