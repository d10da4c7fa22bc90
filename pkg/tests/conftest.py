# -*- coding: utf-8 -*-
"""Shared fixtures for the fairaudit tests."""

import numpy as np
import pytest

from fairaudit.audit_trail import AuditTrail
from fairaudit.bootstrap import BootstrapConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    """A fast bootstrap configuration used by most procedure tests."""
    return BootstrapConfig(B=200, seed=7, alpha=0.1, workers=1)


@pytest.fixture
def categorical_trail(rng):
    """600 records with two categorical covariates; group 'race=B' has a higher loss."""
    n = 600
    race = rng.choice(['A', 'B', 'C'], size=n, p=[0.5, 0.3, 0.2])
    sex = rng.choice(['F', 'M'], size=n)
    loss = rng.normal(1.0, 0.5, n) + 0.6 * (race == 'B')
    return AuditTrail(loss, categorical={'race': race, 'sex': sex})


@pytest.fixture
def interval_trail(rng):
    """400 records with a uniform covariate x and a loss that grows with x."""
    n = 400
    x = rng.uniform(0, 1, n)
    loss = x + rng.normal(0, 0.3, n)**2
    return AuditTrail(loss, numeric={'x': x})


@pytest.fixture
def binary_trail(rng):
    """500 records with a binary loss, outcome y, and a categorical group."""
    n = 500
    group = rng.choice(['g1', 'g2', 'g3', 'g4'], size=n)
    y = rng.integers(2, size=n)
    loss = (rng.random(n) < 0.3 + 0.1 * y).astype(float)
    return AuditTrail(loss, numeric={'y': y}, categorical={'group': group})
