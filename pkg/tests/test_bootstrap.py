# -*- coding: utf-8 -*-
"""Tests for fairaudit.bootstrap."""

import itertools
import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from scipy import stats

from fairaudit.audit_trail import AuditTrail, MomentCache
from fairaudit.bootstrap import (
    BootstrapConfig, ReplicateStats, bootstrap_statistics, quantile, replicate_statistic,
    resample_weights, weight_matrix
)
from fairaudit.groups import ExplicitGroups
from fairaudit.utils import AuditInputError


@pytest.mark.parametrize(
    'alpha, expected', [(0.9, 9), (0.5, 5), (0.95, 10), (0.1, 1), (0.05, 1), (1.0, 10)]
)
def test_quantile_inf_convention(alpha, expected):
    samples = np.arange(1, 11)[::-1]
    assert quantile(alpha, samples) == expected


def test_quantile_errors():
    with pytest.raises(AuditInputError):
        quantile(0.5, [])
    with pytest.raises(AuditInputError):
        quantile(0.0, [1.0])


@given(
    samples=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
    scale=st.floats(0.1, 100),
    shift=st.floats(-100, 100),
    alpha=st.floats(0.01, 1.0),
)
def test_quantile_equivariance(samples, scale, shift, alpha):
    samples = np.array(samples)
    expected = quantile(alpha, samples)
    assert quantile(alpha, scale * samples + shift) == pytest.approx(
        scale * expected + shift, rel=1e-9, abs=1e-6
    )
    assert expected in samples


def test_weights_sum_to_n_and_are_deterministic():
    weights = resample_weights(3, 17, 25)
    assert weights.sum() == 25
    np.testing.assert_array_equal(weights, resample_weights(3, 17, 25))
    assert not np.array_equal(weights, resample_weights(3, 18, 25))


def test_weight_matrix_rows():
    matrix = weight_matrix(0, [4, 2], 10)
    np.testing.assert_array_equal(matrix[0], resample_weights(0, 4, 10))
    np.testing.assert_array_equal(matrix[1], resample_weights(0, 2, 10))


@pytest.mark.parametrize('workers', [1, 2, 4])
def test_results_do_not_depend_on_workers(workers):
    config = BootstrapConfig(B=173, seed=5, workers=workers)
    loss = np.linspace(0, 1, 30)
    output = bootstrap_statistics(lambda weights, replicates: weights @ loss, 30, config)
    reference = bootstrap_statistics(
        lambda weights, replicates: weights @ loss, 30, config.replace(workers=1)
    )
    assert output.shape == (173,)
    np.testing.assert_array_equal(output, reference)


def test_config_validation():
    with pytest.raises(AuditInputError):
        BootstrapConfig(B=0)
    with pytest.raises(AuditInputError):
        BootstrapConfig(seed=-1)
    with pytest.raises(AuditInputError):
        BootstrapConfig(alpha=1.0)
    with pytest.raises(AuditInputError):
        BootstrapConfig(p_star=0)
    assert 'workers' not in BootstrapConfig(workers=3).to_dict()


def _small_setup(loss):
    trail = AuditTrail(loss)
    groups = ExplicitGroups(['first', 'all'], [[True, False, False][:len(loss)], [True] * len(loss)])
    moments = MomentCache(trail, groups, 0.0, np.zeros(len(loss)))
    return trail, groups, moments


def test_delta_statistic_is_nan_for_missed_group():
    loss = np.array([1.0, 2.0, 4.0])
    trail, groups, moments = _small_setup(loss)
    weights = np.array([[0.0, 3.0, 0.0], [1.0, 1.0, 1.0]])
    replicate_stats = ReplicateStats(weights, loss, groups, np.zeros(2))
    deltas = replicate_statistic('delta', replicate_stats, moments)
    assert np.isnan(deltas[0, 0])
    assert deltas[1, 0] == pytest.approx(0.0)
    assert deltas[0, 1] == pytest.approx(2.0 - 7.0 / 3)


def test_product_form_with_missed_group():
    loss = np.array([1.0, 2.0, 4.0])
    trail, groups, moments = _small_setup(loss)
    weights = np.array([[0.0, 3.0, 0.0]])
    replicate_stats = ReplicateStats(weights, loss, groups, np.array([0.5]))
    values = replicate_statistic('lower', replicate_stats, moments)
    # P*(first) = 0, so the statistic is P_n * (0 - 0) = 0
    assert values[0, 0] == 0.0
    # all: P_n = 1, P* eps* = 6/3 - 0.5, P* eps_hat = 7/3
    assert values[0, 1] == pytest.approx(2.0 - 0.5 - 7.0 / 3)


def test_boolean_statistic_formula():
    loss = np.array([1.0, 2.0, 4.0])
    trail, groups, moments = _small_setup(loss)
    weights = np.array([[2.0, 0.0, 1.0]])
    replicate_stats = ReplicateStats(weights, loss, groups, np.array([0.0]))
    epsilon = 0.5
    values = replicate_statistic('boolean', replicate_stats, moments, epsilon=epsilon)
    p_star = 2.0 / 3
    eps_star = 1.0
    expected = p_star * (eps_star - epsilon) - (1.0 / 3) * (1.0 - epsilon)
    assert values[0, 0] == pytest.approx(expected)


def test_rescaled_needs_scale():
    loss = np.array([1.0, 2.0, 4.0])
    trail, groups, moments = _small_setup(loss)
    replicate_stats = ReplicateStats(np.ones((1, 3)), loss, groups, np.zeros(1))
    with pytest.raises(AuditInputError):
        replicate_statistic('lower_rescaled', replicate_stats, moments)


@pytest.mark.parametrize('loss', [[0.0, 1.0], [1.0, 3.0, 7.0]])
def test_bootstrap_matches_exhaustive_enumeration(loss):
    loss = np.array(loss)
    n = loss.size
    config = BootstrapConfig(B=50_000, seed=11)
    replicates = bootstrap_statistics(lambda weights, indices: weights @ loss / n, n, config)

    exact = {}
    for draws in itertools.product(range(n), repeat=n):
        counts = np.bincount(draws, minlength=n)
        value = round(float(counts @ loss / n), 10)
        exact[value] = exact.get(value, 0) + 1 / n**n

    observed = {}
    for value in np.round(replicates, 10):
        observed[value] = observed.get(value, 0) + 1 / config.B
    support = set(exact) | set(observed)
    total_variation = 0.5 * sum(abs(exact.get(v, 0) - observed.get(v, 0)) for v in support)
    assert total_variation < 0.02


@settings(deadline=None, max_examples=25)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**31))
def test_weights_are_multinomial_counts(n, seed):
    weights = resample_weights(seed, 0, n)
    assert weights.shape == (n,)
    assert weights.min() >= 0
    assert weights.sum() == n


def test_weights_distribution_is_uniform_multinomial():
    counts = np.array([resample_weights(1, b, 4) for b in range(4000)])
    # each record is drawn Binomial(4, 1/4) times
    observed = np.bincount(counts[:, 0], minlength=5) / counts.shape[0]
    expected = stats.binom.pmf(np.arange(5), 4, 0.25)
    assert np.abs(observed - expected).max() < 0.03
    assert math.isclose(counts.mean(), 1.0, abs_tol=0.02)
