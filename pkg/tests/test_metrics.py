"""Metric checks, including a Monte Carlo reference for Cohen's kappa."""

import numpy as np
import pytest

from turnspike.metrics import (TAU_GRID, EarlyCurve, auc, cohen_kappa, f1,
                               format_median_mad, mad, median_low, weighted_f1)


def test_f1_known_counts():
    assert f1(8, 2, 2) == pytest.approx(0.8, abs=1e-12)


def test_f1_degenerate_conventions():
    assert f1(7, 0, 0) == 1.0
    assert f1(0, 5, 0) == 0.0
    assert f1(0, 0, 3) == 0.0
    assert f1(0, 0, 0) == 0.0


def test_f1_rejects_negative_counts():
    with pytest.raises(ValueError):
        f1(-1, 0, 0)


def test_weighted_f1_equal_sizes_is_plain_mean():
    confusions = [(8, 2, 2), (3, 1, 2)]
    expected = (f1(8, 2, 2) + f1(3, 1, 2)) / 2.0
    assert weighted_f1(confusions, (10, 10)) == pytest.approx(expected)


def test_weighted_f1_single_class():
    assert weighted_f1([(8, 2, 2)], (10,)) == pytest.approx(f1(8, 2, 2))


def test_weighted_f1_support_weighting():
    # per-class F1 of 1.0 and 0.0 with sizes 90/10
    assert weighted_f1([(90, 0, 0), (0, 10, 10)], (90, 10)) == pytest.approx(0.9)


def test_weighted_f1_input_validation():
    with pytest.raises(ValueError):
        weighted_f1([], [])
    with pytest.raises(ValueError):
        weighted_f1([(1, 0, 0)], (5, 5))
    with pytest.raises(ValueError):
        weighted_f1([(1, 0, 0)], (0,))


def test_auc_constant_curves():
    assert auc(EarlyCurve(TAU_GRID, (1.0,) * 10)) == pytest.approx(1.0)
    assert auc(EarlyCurve(TAU_GRID, (0.5,) * 10)) == pytest.approx(0.5)


def test_auc_point_mass_at_full_observation():
    values = (0.0,) * 9 + (1.0,)
    assert auc(EarlyCurve(TAU_GRID, values)) == pytest.approx(0.1)


def test_auc_of_constant_equals_the_constant():
    rng = np.random.default_rng(0)
    for c in rng.random(20):
        assert auc(EarlyCurve(TAU_GRID, (float(c),) * 10)) == pytest.approx(c)


def test_auc_rejects_other_grids():
    with pytest.raises(ValueError):
        auc(EarlyCurve((0.5, 1.0), (1.0, 1.0)))


def test_median_low_conventions():
    assert median_low([3.0, 1.0, 2.0]) == 2.0
    # even length takes the lower of the two middles
    assert median_low([4.0, 1.0, 3.0, 2.0]) == 2.0
    with pytest.raises(ValueError):
        median_low([])


def test_mad_examples():
    assert mad([0.9, 0.9, 0.9]) == 0.0
    assert mad([0.8, 0.9, 1.0]) == pytest.approx(0.1)


def test_format_median_mad():
    assert format_median_mad([0.922, 0.932, 0.942]) == "0.932 ± 0.010"


def test_kappa_perfect_agreement():
    assert cohen_kappa([0, 1, 0, 1], [0, 1, 0, 1]) == pytest.approx(1.0)
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0


def test_kappa_hand_worked_example():
    # p_obs = 0.75, p_exp = 0.5 * 0.25 + 0.5 * 0.75 = 0.5
    assert cohen_kappa([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(0.5)


def test_kappa_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(25):
        a = rng.integers(0, 3, size=50)
        b = rng.integers(0, 3, size=50)
        assert cohen_kappa(a, b) == pytest.approx(cohen_kappa(b, a), abs=1e-12)


def test_kappa_independent_raters_is_near_zero():
    # Monte Carlo reference: independent uniform labels have expected kappa 0,
    # and at n=10000 the sampling deviation stays well inside 0.05.
    rng = np.random.default_rng(12345)
    a = rng.integers(0, 2, size=10_000)
    b = rng.integers(0, 2, size=10_000)
    assert abs(cohen_kappa(a, b)) < 0.05


def test_kappa_input_validation():
    with pytest.raises(ValueError):
        cohen_kappa([0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        cohen_kappa([], [])
