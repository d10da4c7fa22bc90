# -*- coding: utf-8 -*-
"""Tests for fairaudit.synthetic_data."""

import numpy as np
import pytest
from scipy import integrate

from fairaudit import synthetic_data
from fairaudit.synthetic_data import (
    GRID_SIZE, SyntheticSpec, bernoulli_groups, conditional_risk, generate, population_atoms,
    true_interval_disparity
)
from fairaudit.utils import AuditInputError


def test_closed_form_heteroskedastic():
    value = true_interval_disparity('heteroskedastic', 1.0, 0.0, 0.2, 0.6)
    assert value == pytest.approx(0.4 + 0.52 / 3)


@pytest.mark.parametrize('delta', [0.0, 0.5, 2.0])
def test_closed_form_homoskedastic(delta):
    assert true_interval_disparity('homoskedastic', delta, 0.0, 0.0, 1.0) == pytest.approx(
        1 + delta**2 / 3
    )


def test_closed_form_matches_numerical_integral():
    integral, _ = integrate.quad(lambda x: conditional_risk('heteroskedastic', 1.3, 0.4, x), 0.3, 0.8)
    numeric = integral / 0.5
    assert true_interval_disparity('heteroskedastic', 1.3, 0.4, 0.3, 0.8) == pytest.approx(
        numeric, rel=1e-6
    )


def test_discrete_grid_points():
    atoms = np.arange(GRID_SIZE) / 100
    expected = conditional_risk('discrete', 1.0, 0.2, atoms[11:21]).mean()
    assert true_interval_disparity('discrete', 1.0, 0.2, 0.1, 0.2) == pytest.approx(expected)
    closed = conditional_risk('discrete', 1.0, 0.2, atoms[10:21]).mean()
    assert true_interval_disparity('discrete', 1.0, 0.2, 0.1, 0.2, closed_left=True) == pytest.approx(
        closed
    )


@pytest.mark.parametrize(
    'model, a, b', [
        ('homoskedastic', 0.5, 0.5), ('homoskedastic', 0.6, 0.2), ('heteroskedastic', -0.1, 0.5),
        ('discrete', 0.101, 0.105), ('linear', 0.0, 1.0)
    ]
)
def test_true_disparity_rejects(model, a, b):
    with pytest.raises(AuditInputError):
        true_interval_disparity(model, 1.0, 0.0, a, b)


@pytest.mark.parametrize('model', synthetic_data.MODELS)
def test_generate_monte_carlo(model):
    spec = SyntheticSpec(model, beta0=1.5, audit_n=200_000, train_n=10, seed=3, beta_hat=0.5)
    sample = generate(spec)
    x = sample.trail.column('x')
    loss = sample.trail.loss
    for a, b in [(0.0, 0.3), (0.3, 0.7), (0.5, 1.0)]:
        inside = (x > a) & (x <= b)
        estimate = loss[inside].mean()
        standard_error = loss[inside].std(ddof=1) / np.sqrt(inside.sum())
        truth = true_interval_disparity(model, 1.5, 0.5, a, b)
        assert abs(estimate - truth) < 5 * standard_error


def test_generate_is_deterministic():
    first = generate(SyntheticSpec('heteroskedastic', seed=8, train_n=50, audit_n=30))
    second = generate(SyntheticSpec('heteroskedastic', seed=8, train_n=50, audit_n=30))
    assert first.trail.equals(second.trail)
    assert first.beta0 == second.beta0
    train, trail = first
    assert list(train.columns) == ['x', 'y']
    assert trail.n == 30


def test_generate_fits_no_intercept_slope():
    sample = generate(SyntheticSpec('homoskedastic', beta0=2.0, train_n=500, audit_n=10, seed=1))
    x = sample.train['x'].to_numpy()
    y = sample.train['y'].to_numpy()
    assert sample.beta_hat == pytest.approx((x @ y) / (x @ x))


def test_discrete_model_support():
    sample = generate(SyntheticSpec('discrete', beta0=0.0, audit_n=500, train_n=10))
    x = sample.trail.column('x')
    np.testing.assert_allclose(x * 100, np.round(x * 100), atol=1e-9)
    assert x.min() >= 0 and x.max() <= 1


def test_spec_validation():
    with pytest.raises(AuditInputError):
        SyntheticSpec('quadratic')
    with pytest.raises(AuditInputError):
        SyntheticSpec(audit_n=1)
    assert SyntheticSpec(seed=4).to_dict()['seed'] == 4


def test_population_atoms():
    atoms, probabilities, means = population_atoms(1.0, 0.0)
    assert atoms.size == GRID_SIZE
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(means, atoms + atoms**2)


def test_bernoulli_groups():
    trail = bernoulli_groups(20_000, [0.1, 0.5, 0.9], seed=2)
    assert set(trail.levels['group']) == {'g00', 'g01', 'g02'}
    labels = trail.labels('group')
    for name, mean in zip(['g00', 'g01', 'g02'], [0.1, 0.5, 0.9]):
        assert trail.loss[labels == name].mean() == pytest.approx(mean, abs=0.02)
    with pytest.raises(AuditInputError):
        bernoulli_groups(10, [1.5])
