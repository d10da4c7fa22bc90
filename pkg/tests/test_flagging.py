# -*- coding: utf-8 -*-
"""Tests for fairaudit.flagging."""

from hypothesis import given, strategies as st
import numpy as np
import pytest
from scipy import stats

from fairaudit.audit_trail import AuditTrail, TargetSpec
from fairaudit.bootstrap import BootstrapConfig
from fairaudit.flagging import (
    NORMAL_MAD_CONSTANT, benjamini_hochberg, equalized_odds_flag, flag_grid, flag_p_values,
    mad_p_values, mad_scale, multicalibration_flag
)
from fairaudit.groups import ExplicitGroups, intersect_categorical
from fairaudit.utils import AuditInputError


def _step_up(pvals, alpha):
    """Direct step-up: reject H_(1), ..., H_(k*) in sorted order."""
    order = np.argsort(pvals, kind='stable')
    m = len(pvals)
    k_star = 0
    for k in range(1, m + 1):
        if pvals[order[k - 1]] <= k * alpha / m:
            k_star = k
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:k_star]] = True
    return rejected


def test_benjamini_hochberg_known_values():
    pvals = np.array([0.01, 0.035, 0.025, 0.005, 0.5])
    # sorted thresholds at alpha = 0.05 are 0.01, 0.02, 0.03, 0.04, 0.05
    np.testing.assert_array_equal(
        benjamini_hochberg(pvals, 0.05), [True, True, True, True, False]
    )
    np.testing.assert_array_equal(benjamini_hochberg([0.2, 0.3], 0.05), [False, False])
    assert benjamini_hochberg([], 0.05).size == 0


@given(
    pvals=st.lists(st.floats(0, 1), min_size=1, max_size=60),
    alpha=st.floats(0.001, 0.5),
)
def test_benjamini_hochberg_matches_step_up(pvals, alpha):
    pvals = np.array(pvals)
    np.testing.assert_array_equal(benjamini_hochberg(pvals, alpha), _step_up(pvals, alpha))


def _p_value_cases(count=10_000, seed=2024):
    """Random p-value vectors with ties, exact step-up thresholds, and the ends of [0, 1]."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(count):
        m = int(rng.integers(1, 51))
        alpha = float(rng.uniform(0.001, 0.5))
        kind = i % 4
        if kind == 0:
            pvals = rng.random(m)
        elif kind == 1:
            pvals = np.round(rng.random(m) * rng.uniform(0.05, 1), 2)
        elif kind == 2:
            ranks = rng.integers(1, m + 1, size=m)
            pvals = np.array([k * alpha / m for k in ranks])
            noisy = rng.random(m) < 0.3
            pvals[noisy] = rng.random(noisy.sum())
        else:
            pvals = rng.choice([0.0, alpha / m, alpha, 1.0], size=m)
        cases.append((pvals, alpha))
    return cases


def test_benjamini_hochberg_many_vectors():
    for pvals, alpha in _p_value_cases():
        np.testing.assert_array_equal(benjamini_hochberg(pvals, alpha), _step_up(pvals, alpha))


@pytest.mark.parametrize('pvals', [[0.1, np.nan], [-0.1], [1.2]])
def test_benjamini_hochberg_rejects_invalid(pvals):
    with pytest.raises(AuditInputError):
        benjamini_hochberg(pvals, 0.1)


def test_mad_scale():
    deltas = np.array([[1.0, np.nan], [-2.0, np.nan], [3.0, 4.0]])
    scales = mad_scale(deltas)
    assert scales[0] == pytest.approx(2.0 / NORMAL_MAD_CONSTANT)
    assert scales[1] == pytest.approx(4.0 / NORMAL_MAD_CONSTANT)
    assert NORMAL_MAD_CONSTANT == pytest.approx(0.6744897501960817)


def test_mad_scale_recovers_normal_sd(rng):
    assert mad_scale(rng.normal(0, 2.0, 200_000)) == pytest.approx(2.0, rel=0.01)


@pytest.mark.parametrize('direction', ['greater', 'less', 'two_sided'])
def test_mad_p_values(direction):
    eps_hat = np.array([0.3, -0.2, 0.0])
    s_star = np.array([0.1, 0.2, 0.05])
    epsilon = 0.1
    p_values, details = mad_p_values(eps_hat, s_star, epsilon, direction)
    greater = stats.norm.sf((eps_hat - epsilon) / s_star)
    less = stats.norm.cdf((eps_hat + epsilon) / s_star)
    expected = {
        'greater': greater, 'less': less, 'two_sided': np.minimum(greater, less)
    }[direction]
    np.testing.assert_allclose(p_values, expected)
    assert not details['degenerate'].any()


def test_mad_p_values_degenerate_scale():
    p_values, details = mad_p_values([0.5, 0.05], [0.0, 0.0], 0.1, 'greater')
    np.testing.assert_array_equal(p_values, [0.0, 1.0])
    np.testing.assert_array_equal(details['degenerate'], [True, True])
    with pytest.raises(AuditInputError):
        mad_p_values([0.1], [0.1], 0.0, 'sideways')


def test_flag_report(categorical_trail, small_config):
    groups = intersect_categorical(categorical_trail, ['race', 'sex'])
    report = flag_p_values(
        categorical_trail, TargetSpec.pooled_mean(), groups, 0.1, small_config
    )
    table = report.table
    assert len(table) == len(groups)
    assert report.check_consistency()
    assert report.fdr_mode == 'heuristic FDR'
    flagged = report.flagged_names()
    assert flagged and all(name.startswith('race=B') for name in flagged)
    assert (table['missing_replicates'] == 0).all()
    assert report.to_dict()['procedure'] == 'flag'


def test_fdr_mode_controlled(categorical_trail, small_config):
    groups = intersect_categorical(categorical_trail, ['race'])
    report = flag_p_values(categorical_trail, TargetSpec.fixed(1.0), groups, 0.1, small_config)
    assert report.fdr_mode == 'controlled'
    marginals = intersect_categorical(categorical_trail, ['race', 'sex'], include_marginals=True)
    overlapping = flag_p_values(
        categorical_trail, TargetSpec.fixed(1.0), marginals, 0.1, small_config
    )
    assert overlapping.fdr_mode == 'heuristic FDR'


def test_flag_reports_missing_replicates(small_config):
    loss = np.arange(40.0)
    labels = ['rare'] + ['common'] * 39
    trail = AuditTrail(loss, categorical={'g': labels})
    groups = ExplicitGroups.from_labels(trail.labels('g'))
    report = flag_p_values(trail, TargetSpec.fixed(0.0), groups, 0.0, small_config)
    rare = report.table.set_index('name').loc['rare']
    # a single record is missed by about (1 - 1/n)^n of the replicates
    assert 0.2 * small_config.B < rare['missing_replicates'] < 0.55 * small_config.B
    assert report.flags['replicates_with_missing_groups'] == rare['missing_replicates']


def test_flag_degenerate_group_warns(small_config):
    trail = AuditTrail([1.0] * 20 + [3.0, 5.0] * 10, categorical={'g': ['a'] * 20 + ['b'] * 20})
    groups = ExplicitGroups.from_labels(trail.labels('g'))
    with pytest.warns(UserWarning, match='constant'):
        report = flag_p_values(trail, TargetSpec.fixed(0.0), groups, 2.0, small_config)
    table = report.table.set_index('name')
    assert table.loc['a', 'degenerate']
    assert table.loc['a', 'p_value'] == 1.0
    assert report.flags['degenerate_scale'] == ['a']


def test_group_flags_standard(categorical_trail, small_config):
    groups = intersect_categorical(categorical_trail, ['race'])
    report = flag_p_values(categorical_trail, TargetSpec.pooled_mean(), groups, 0.0, small_config)
    summary = report.group_flags()
    assert list(summary['name']) == list(report.table['name'])
    np.testing.assert_array_equal(summary['flagged'], report.table['flagged'])


def test_equalized_odds_flag(binary_trail, small_config):
    groups = ExplicitGroups.from_labels(binary_trail.labels('group'))
    report = equalized_odds_flag(binary_trail, groups, 0.0, small_config, outcome='y')
    assert report.recipe == 'equalized_odds'
    assert len(report.table) == 2 * len(groups)
    assert set(report.table['stratum']) == {0, 1}
    assert report.table['name'].str.contains(r' \| y=').all()
    assert report.check_consistency()
    summary = report.group_flags()
    assert sorted(summary['name']) == sorted(groups.names)


def test_equalized_odds_flag_detects_shifted_group(rng, small_config):
    n = 1200
    group = rng.choice(['a', 'b', 'c'], size=n)
    y = rng.integers(2, size=n)
    rate = 0.2 + 0.2 * y + 0.4 * (group == 'c')
    loss = (rng.random(n) < rate).astype(float)
    trail = AuditTrail(loss, numeric={'y': y}, categorical={'group': group})
    groups = ExplicitGroups.from_labels(trail.labels('group'))
    report = equalized_odds_flag(trail, groups, 0.05, small_config)
    summary = report.group_flags().set_index('name')
    assert summary.loc['c', 'flagged']
    assert 'c | y=' in summary.loc['c', 'triggered_by']
    assert not summary.loc['a', 'flagged']


def test_multicalibration_flag(rng, small_config):
    n = 900
    group = rng.choice(['a', 'b'], size=n)
    bins = rng.choice(['low', 'high'], size=n)
    residual = rng.normal(0, 0.2, n) + 0.5 * ((group == 'b') & (bins == 'high'))
    trail = AuditTrail(residual, categorical={'group': group, 'bin': bins})
    base = ExplicitGroups.from_labels(trail.labels('group'))
    report = multicalibration_flag(trail, base, 'bin', gamma=0.05, epsilon=0.05, config=small_config)
    assert report.recipe == 'multicalibration'
    assert report.epsilon == pytest.approx(0.1)
    assert set(report.table['parent']) == {'a', 'b'}
    summary = report.group_flags().set_index('name')
    assert summary.loc['b', 'flagged']
    assert summary.loc['b', 'triggered_by'] == 'b@high'
    assert not summary.loc['a', 'flagged']


def test_flag_grid(categorical_trail, small_config):
    groups = intersect_categorical(categorical_trail, ['race', 'sex'], include_marginals=True)
    report = flag_p_values(categorical_trail, TargetSpec.pooled_mean(), groups, 0.1, small_config)
    grid = flag_grid(report, groups)
    assert list(grid.columns[:3]) == ['name', 'race', 'sex']
    assert len(grid) == len(groups)
    marginal = grid.set_index('name').loc['race=B']
    assert marginal['sex'] == ''


def test_flag_grid_rejects_equalized_odds(binary_trail, small_config):
    groups = ExplicitGroups.from_labels(binary_trail.labels('group'))
    report = equalized_odds_flag(binary_trail, groups, 0.0, small_config)
    with pytest.raises(AuditInputError):
        flag_grid(report, groups)


@pytest.mark.slow
def test_fdr_is_controlled_on_disjoint_groups():
    """Twenty disjoint Bernoulli groups, all null; the false discovery rate stays below alpha."""
    config = BootstrapConfig(B=200, alpha=0.1)
    false_discoveries = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        group = rng.integers(20, size=1000)
        loss = (rng.random(1000) < 0.3).astype(float)
        trail = AuditTrail(loss, categorical={'g': group.astype(str)})
        groups = ExplicitGroups.from_labels(trail.labels('g'))
        report = flag_p_values(
            trail, TargetSpec.fixed(0.3), groups, 0.0, config.replace(seed=seed)
        )
        false_discoveries.append(bool(report.table['flagged'].any()))
    assert np.mean(false_discoveries) <= 0.1 + 3 * np.sqrt(0.1 * 0.9 / 100)
