# -*- coding: utf-8 -*-
"""Simulated regression data with known conditional risk, used to validate the audits.

Three data-generating processes are provided, each with X on [0, 1] and
Y ~ Normal(beta0 * X, variance):

* 'homoskedastic': X ~ Uniform(0, 1), variance 1.
* 'heteroskedastic': X ~ Uniform(0, 1), variance X.
* 'discrete': X uniform on the grid {0, 0.01, ..., 1}, variance X.

A no-intercept least-squares fit beta_hat * x is trained on one sample, and
the audit trail holds the squared errors of that fit on a fresh sample, so
E[L | X = x] = noise(x) + (beta0 - beta_hat)^2 * x^2 is known exactly.

Attributes
----------
MODELS : tuple(str)
    The available data-generating processes.
GRID_SIZE : int
    The number of support points of the 'discrete' model.

"""

import numpy as np
import pandas as pd

from .audit_trail import AuditTrail
from .utils import AuditInputError


__all__ = [
    'MODELS', 'SyntheticSpec', 'SyntheticSample', 'generate', 'conditional_risk',
    'true_interval_disparity', 'population_atoms', 'bernoulli_groups'
]

MODELS = ('homoskedastic', 'heteroskedastic', 'discrete')
GRID_SIZE = 101


class SyntheticSpec:
    """
    Describes one simulated training and audit sample.

    Parameters
    ----------
    model : {'homoskedastic', 'heteroskedastic', 'discrete'}, optional
        The data-generating process. Default is 'homoskedastic'.
    beta0 : float, optional
        The true slope. If None (default), drawn from Normal(0, 1) with the
        sample's random stream.
    train_n : int, optional
        The number of training records. Default is 1000.
    audit_n : int, optional
        The number of audit records. Default is 1600.
    seed : int, optional
        The seed of the sample's random stream. Default is 0.
    beta_hat : float, optional
        If given, used as the fitted slope instead of the least-squares fit.

    """

    def __init__(self, model='homoskedastic', beta0=None, train_n=1000, audit_n=1600, seed=0,
                 beta_hat=None):
        """
        Raises
        ------
        AuditInputError
            Raised if model is unknown or either sample size is below 2.

        """

        if model not in MODELS:
            raise AuditInputError(f'Model must be one of {MODELS}, not "{model}".')
        for name, value in (('train_n', train_n), ('audit_n', audit_n)):
            if int(value) != value or value < 2:
                raise AuditInputError(f'{name} must be an integer >= 2, not {value!r}.')

        self.model = model
        self.beta0 = None if beta0 is None else float(beta0)
        self.train_n = int(train_n)
        self.audit_n = int(audit_n)
        self.seed = int(seed)
        self.beta_hat = None if beta_hat is None else float(beta_hat)


    def __str__(self):
        return (
            f'{self.__class__.__name__}(model={self.model}, beta0={self.beta0}, '
            f'train_n={self.train_n}, audit_n={self.audit_n}, seed={self.seed})'
        )


    def to_dict(self):
        return {
            'model': self.model, 'beta0': self.beta0, 'train_n': self.train_n,
            'audit_n': self.audit_n, 'seed': self.seed, 'beta_hat': self.beta_hat
        }


class SyntheticSample:
    """
    The output of :func:`generate`.

    Attributes
    ----------
    train : pd.DataFrame
        The training sample, with columns x and y.
    trail : AuditTrail
        The audit trail; numeric covariate 'x' and the squared-error loss.
    beta0 : float
        The true slope.
    beta_hat : float
        The fitted slope.
    model : str
        The data-generating process.

    """

    def __init__(self, train, trail, beta0, beta_hat, model):
        self.train = train
        self.trail = trail
        self.beta0 = beta0
        self.beta_hat = beta_hat
        self.model = model


    def __iter__(self):
        return iter((self.train, self.trail))


def _draw(rng, model, beta0, size):
    """Draws (x, y) pairs from a model."""
    if model == 'discrete':
        x = rng.integers(GRID_SIZE, size=size) / (GRID_SIZE - 1)
    else:
        x = rng.uniform(0, 1, size)
    noise = rng.standard_normal(size)
    if model != 'homoskedastic':
        noise *= np.sqrt(x)
    return x, beta0 * x + noise


def generate(spec):
    """
    Draws a training sample, fits the slope, and builds the audit trail.

    Parameters
    ----------
    spec : SyntheticSpec
        The sample description.

    Returns
    -------
    SyntheticSample
        The samples and slopes. Unpacks as (train, trail).

    """

    rng = np.random.default_rng(spec.seed)
    beta0 = rng.standard_normal() if spec.beta0 is None else spec.beta0

    train_x, train_y = _draw(rng, spec.model, beta0, spec.train_n)
    if spec.beta_hat is None:
        beta_hat = float(np.linalg.lstsq(train_x[:, None], train_y, rcond=None)[0][0])
    else:
        beta_hat = spec.beta_hat

    audit_x, audit_y = _draw(rng, spec.model, beta0, spec.audit_n)
    trail = AuditTrail((audit_y - beta_hat * audit_x)**2, numeric={'x': audit_x})

    return SyntheticSample(
        pd.DataFrame({'x': train_x, 'y': train_y}), trail, float(beta0), beta_hat, spec.model
    )


def conditional_risk(model, beta0, beta_hat, x):
    """
    E[(Y - beta_hat * X)^2 | X = x].

    Parameters
    ----------
    model : str
        The data-generating process.
    beta0 : float
        The true slope.
    beta_hat : float
        The fitted slope.
    x : float or array-like
        The covariate value(s).

    Returns
    -------
    float or np.ndarray
        1 + delta^2 x^2 for 'homoskedastic', x + delta^2 x^2 otherwise, with
        delta = beta0 - beta_hat.

    """

    x = np.asarray(x, dtype=float)
    noise = np.ones_like(x) if model == 'homoskedastic' else x
    return noise + (beta0 - beta_hat)**2 * x**2


def true_interval_disparity(model, beta0, beta_hat, a, b, closed_left=False):
    """
    The mean squared error of the fit over the records with X in (a, b].

    Parameters
    ----------
    model : str
        The data-generating process.
    beta0 : float
        The true slope.
    beta_hat : float
        The fitted slope.
    a : float
        The lower endpoint.
    b : float
        The upper endpoint.
    closed_left : bool, optional
        For the 'discrete' model only, if True the interval is [a, b]; used
        for the first interval of a grid, which holds its left endpoint.
        Default is False.

    Returns
    -------
    float
        E[L | a < X <= b], relative to the target theta = 0.

    Raises
    ------
    AuditInputError
        Raised if a >= b, if the interval leaves [0, 1], or if a discrete
        interval contains no grid point.

    Notes
    -----
    For the continuous models the conditional mean is integrated in closed
    form, giving noise + delta^2 (a^2 + ab + b^2) / 3, where noise is 1 for
    'homoskedastic' and (a + b) / 2 for 'heteroskedastic'.

    """

    if model not in MODELS:
        raise AuditInputError(f'Model must be one of {MODELS}, not "{model}".')
    if not a < b:
        raise AuditInputError(f'The interval needs a < b, but got ({a}, {b}].')
    if a < 0 or b > 1:
        raise AuditInputError(f'The interval ({a}, {b}] must lie within [0, 1].')

    delta_squared = (beta0 - beta_hat)**2
    if model == 'discrete':
        atoms = np.arange(GRID_SIZE) / (GRID_SIZE - 1)
        inside = (atoms >= a if closed_left else atoms > a) & (atoms <= b)
        if not inside.any():
            raise AuditInputError(f'The interval ({a}, {b}] contains no grid point.')
        return float(conditional_risk(model, beta0, beta_hat, atoms[inside]).mean())

    noise = 1.0 if model == 'homoskedastic' else (a + b) / 2
    return noise + delta_squared * (a**2 + a * b + b**2) / 3


def population_atoms(beta0, beta_hat):
    """
    The support, probabilities, and conditional risks of the 'discrete' model.

    Returns
    -------
    atoms : np.ndarray, shape (101,)
        The grid {0, 0.01, ..., 1}.
    probabilities : np.ndarray, shape (101,)
        The uniform probabilities 1/101.
    conditional_means : np.ndarray, shape (101,)
        E[L | X = atom].

    """

    atoms = np.arange(GRID_SIZE) / (GRID_SIZE - 1)
    probabilities = np.full(GRID_SIZE, 1 / GRID_SIZE)
    return atoms, probabilities, conditional_risk('discrete', beta0, beta_hat, atoms)


def bernoulli_groups(n, means, seed=0):
    """
    Binary losses on equally likely, disjoint groups with known means.

    Parameters
    ----------
    n : int
        The number of records.
    means : array-like
        The probability that the loss is 1 within each group.
    seed : int, optional
        The seed of the random stream. Default is 0.

    Returns
    -------
    AuditTrail
        With the categorical covariate 'group', whose labels are 'g00',
        'g01', ..., matching the order of means.

    Raises
    ------
    AuditInputError
        Raised if a mean is outside of [0, 1].

    """

    means = np.asarray(means, dtype=float).ravel()
    if means.size < 1 or np.any((means < 0) | (means > 1)):
        raise AuditInputError('Group means must be probabilities.')

    rng = np.random.default_rng(seed)
    codes = rng.integers(means.size, size=n)
    loss = (rng.random(n) < means[codes]).astype(float)
    width = max(2, len(str(means.size - 1)))
    names = np.array([f'g{index:0{width}d}' for index in range(means.size)], dtype=object)
    return AuditTrail(loss, categorical={'group': names[codes]})
