# -*- coding: utf-8 -*-
"""Monte Carlo experiments that check the error rates of the audits on simulated data.

Each experiment repeats an audit on independent simulated samples whose true
group disparities are known, and reports the realized error rate with its
binomial standard error:

* 'fwer': the family-wise rate of false Boolean certificates over the
  sub-intervals of a fixed endpoint grid, and their power.
* 'coverage': how often every simultaneous bound lies on the correct side
  of the truth, and the power to exclude each tolerance.
* 'fdr': the false discovery rate of flagged groups on disjoint groups with
  binary losses.
* 'rkhs_percentile': how often the population supremum of the shift process
  is below the bootstrap critical value.

Trial t of an experiment uses its own seed derived from (seed, t), so the
results do not depend on the number of worker threads.

Attributes
----------
EXPERIMENTS : tuple(str)
    The available experiments.
FAST_TRIALS : int
    The number of trials used in fast mode.

"""

from concurrent.futures import ThreadPoolExecutor
import logging

import numpy as np
import pandas as pd

from .audit_trail import TargetSpec
from .bootstrap import BootstrapConfig
from .certify import boolean_certify, lower_bounds, upper_bounds
from .flagging import flag_p_values
from .groups import ExplicitGroups, interval_grid
from .rkhs import KernelSpec, population_sup_discrete, rkhs_critical_value
from .synthetic_data import (
    SyntheticSpec, bernoulli_groups, generate, population_atoms, true_interval_disparity
)
from .utils import AuditInputError, get_worker_count, parse_weight, validate_level


logger = logging.getLogger(__name__)

__all__ = [
    'EXPERIMENTS', 'ExperimentSpec', 'trial_seed', 'run_fwer', 'run_coverage', 'run_fdr',
    'run_rkhs_percentile', 'run_experiment'
]

EXPERIMENTS = ('fwer', 'coverage', 'fdr', 'rkhs_percentile')
FAST_TRIALS = 50
_DEFAULT_TRIALS = {'fwer': 200, 'coverage': 200, 'fdr': 1000, 'rkhs_percentile': 200}


class ExperimentSpec:
    """
    The settings of one validation experiment.

    Parameters
    ----------
    experiment : {'fwer', 'coverage', 'fdr', 'rkhs_percentile'}
        The experiment to run.
    trials : int, optional
        The number of independent trials per sample size. If None (default),
        50 in fast mode, else 1000 for 'fdr' and 200 otherwise.
    n_grid : Sequence(int), optional
        The audit sample sizes. Default is (100, 200, 400, 800, 1600).
    alpha : float, optional
        The error level. Default is 0.1.
    epsilon : float, optional
        The tolerance for 'fwer' and 'fdr'. Defaults are 1.0 for the
        homoskedastic model, 0.5 for the others, and 0.05 for 'fdr'.
    epsilons : Sequence(float), optional
        The tolerances at which 'coverage' reports power. Default is (0.4, 0.5).
    B : int, optional
        The number of bootstrap replicates per audit. Default is 500.
    p_star : float, optional
        The small-group threshold of the rescaled process. Default is 0.01.
    w0 : float, optional
        The shrinkage weight of the rescaled process. Default is infinity.
    rescaled : bool, optional
        If True, 'fwer' and 'coverage' use the rescaled process. Default is False.
    model : str, optional
        The data-generating process for 'fwer' and 'coverage'. Default is
        'homoskedastic'; 'rkhs_percentile' always uses 'discrete'.
    beta0 : float, optional
        A fixed true slope; if None (default), drawn per trial.
    train_n : int, optional
        The number of training records. Default is 1000.
    endpoints : Sequence(float), optional
        The interval grid. Default is {0, 0.1, ..., 1}.
    direction : str, optional
        'below' (default) or 'above' for 'fwer'.
    side : str, optional
        'upper' (default) or 'lower' for 'coverage'.
    bandwidths : Sequence(float), optional
        The Gaussian kernel bandwidths for 'rkhs_percentile'. Default is (0.1, 0.5, 1).
    num_groups : int, optional
        The number of disjoint groups for 'fdr'. Default is 20.
    n_nonnull : int, optional
        How many of the 'fdr' groups are non-null. Default is 0.
    theta : float, optional
        The fixed target of 'fdr'. Default is 0.3.
    null_mean : float, optional
        The loss rate of null 'fdr' groups. Default is 0.35, which puts them
        exactly on the boundary theta + epsilon.
    nonnull_mean : float, optional
        The loss rate of non-null 'fdr' groups. Default is 0.55.
    seed : int, optional
        The master seed. Default is 0.
    fast : bool, optional
        If True, runs 50 trials unless trials is given. Default is False.
    workers : int, optional
        The number of worker threads for the trials. Default is the
        FAIRAUDIT_WORKERS environment variable, or 1.

    """

    def __init__(self, experiment, *, trials=None, n_grid=(100, 200, 400, 800, 1600),
                 alpha=0.1, epsilon=None, epsilons=(0.4, 0.5), B=500, p_star=0.01, w0=np.inf,
                 rescaled=False, model='homoskedastic', beta0=None, train_n=1000, endpoints=None,
                 direction='below', side='upper', bandwidths=(0.1, 0.5, 1.0), num_groups=20,
                 n_nonnull=0, theta=0.3, null_mean=0.35, nonnull_mean=0.55, seed=0, fast=False,
                 workers=None):
        """
        Raises
        ------
        AuditInputError
            Raised if any setting is invalid.

        """

        if experiment not in EXPERIMENTS:
            raise AuditInputError(f'Experiment must be one of {EXPERIMENTS}, not "{experiment}".')
        if trials is None:
            trials = FAST_TRIALS if fast else _DEFAULT_TRIALS[experiment]
        if int(trials) != trials or trials < 1:
            raise AuditInputError(f'trials must be an integer >= 1, not {trials!r}.')
        if direction not in ('below', 'above'):
            raise AuditInputError(f'direction must be "below" or "above", not "{direction}".')
        if side not in ('upper', 'lower'):
            raise AuditInputError(f'side must be "upper" or "lower", not "{side}".')
        if not 0 <= n_nonnull <= num_groups:
            raise AuditInputError(f'n_nonnull must be in [0, {num_groups}], not {n_nonnull}.')
        n_grid = tuple(int(n) for n in np.atleast_1d(n_grid))
        if not n_grid or min(n_grid) < 2:
            raise AuditInputError('Every sample size in n_grid must be >= 2.')

        if epsilon is None:
            if experiment == 'fdr':
                epsilon = 0.05
            else:
                epsilon = 1.0 if model == 'homoskedastic' else 0.5

        self.experiment = experiment
        self.trials = int(trials)
        self.n_grid = n_grid
        self.alpha = validate_level(alpha)
        self.epsilon = float(epsilon)
        self.epsilons = tuple(float(value) for value in epsilons)
        self.B = int(B)
        self.p_star = float(p_star)
        self.w0 = parse_weight(w0)
        self.rescaled = bool(rescaled)
        self.model = 'discrete' if experiment == 'rkhs_percentile' else model
        self.beta0 = beta0
        self.train_n = int(train_n)
        self.endpoints = (
            np.arange(11) / 10 if endpoints is None else np.asarray(endpoints, dtype=float)
        )
        self.direction = direction
        self.side = side
        self.bandwidths = tuple(float(value) for value in bandwidths)
        self.num_groups = int(num_groups)
        self.n_nonnull = int(n_nonnull)
        self.theta = float(theta)
        self.null_mean = float(null_mean)
        self.nonnull_mean = float(nonnull_mean)
        self.seed = int(seed)
        self.fast = bool(fast)
        self.workers = get_worker_count(workers)
        # checks the remaining bootstrap settings
        self.bootstrap_config(0)


    def __str__(self):
        return (
            f'{self.__class__.__name__}(experiment={self.experiment}, trials={self.trials}, '
            f'n_grid={self.n_grid}, seed={self.seed})'
        )


    def bootstrap_config(self, seed):
        """The configuration of one audit; the bootstrap runs single-threaded inside a trial."""
        return BootstrapConfig(
            B=self.B, seed=seed, alpha=self.alpha, p_star=self.p_star, w0=self.w0, workers=1
        )


    def to_dict(self):
        """The settings echoed in reports; the worker count is left out."""
        output = {
            'experiment': self.experiment, 'trials': self.trials, 'n_grid': list(self.n_grid),
            'alpha': self.alpha, 'B': self.B, 'seed': self.seed, 'fast': self.fast
        }
        if self.experiment in ('fwer', 'coverage'):
            output.update({
                'model': self.model, 'beta0': self.beta0, 'train_n': self.train_n,
                'rescaled': self.rescaled, 'p_star': self.p_star,
                'w0': 'inf' if np.isinf(self.w0) else self.w0,
                'endpoints': self.endpoints.tolist()
            })
        if self.experiment == 'fwer':
            output.update({'epsilon': self.epsilon, 'direction': self.direction})
        elif self.experiment == 'coverage':
            output.update({'epsilons': list(self.epsilons), 'side': self.side})
        elif self.experiment == 'fdr':
            output.update({
                'epsilon': self.epsilon, 'theta': self.theta, 'num_groups': self.num_groups,
                'n_nonnull': self.n_nonnull, 'null_mean': self.null_mean,
                'nonnull_mean': self.nonnull_mean
            })
        else:
            output.update({
                'bandwidths': list(self.bandwidths), 'beta0': self.beta0, 'train_n': self.train_n
            })
        return output


def trial_seed(seed, trial):
    """The seed of one trial, derived from the master seed and the trial index."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])


def _run_trials(function, spec, n):
    """Runs function(n, trial) for every trial, in parallel if workers > 1, keeping trial order."""
    logger.info('%s: running %d trials at n = %d', spec.experiment, spec.trials, n)
    trials = range(spec.trials)
    if spec.workers > 1 and spec.trials > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as executor:
            return list(executor.map(lambda trial: function(n, trial), trials))
    return [function(n, trial) for trial in trials]


def _binomial_se(rate, trials):
    return float(np.sqrt(rate * (1 - rate) / trials))


def _mean_and_se(values):
    """The mean of the finite values and its standard error; NaN when there are none."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.nan, np.nan
    if values.size == 1:
        return float(values[0]), np.nan
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def _interval_truth(spec, sample, groups):
    """The true disparity of every interval in the grid, relative to theta = 0."""
    lower, upper = groups.bounds()
    first = spec.endpoints[0]
    return np.array([
        true_interval_disparity(
            sample.model, sample.beta0, sample.beta_hat, a, b, closed_left=a == first
        )
        for a, b in zip(lower, upper)
    ])


def _sample(spec, n, seed):
    return generate(SyntheticSpec(
        spec.model, beta0=spec.beta0, train_n=spec.train_n, audit_n=n, seed=seed
    ))


def run_fwer(spec):
    """
    Estimates the family-wise error rate and power of Boolean interval certificates.

    Every trial certifies all sub-intervals of the endpoint grid against the
    fixed target 0. A certificate is false when the direction's claim does
    not hold for the true disparity: truth >= epsilon for 'below', and
    truth <= epsilon for 'above'.

    Parameters
    ----------
    spec : ExperimentSpec
        The experiment settings.

    Returns
    -------
    pd.DataFrame
        One row per n with the columns n, trials, fwer, fwer_se, power,
        power_se, and mean_certified.

    """

    target = TargetSpec.fixed(0.0)
    epsilon = spec.epsilon

    def trial(n, index):
        seed = trial_seed(spec.seed, index)
        sample = _sample(spec, n, seed)
        groups = interval_grid(sample.trail, 'x', spec.endpoints)
        report = boolean_certify(
            sample.trail, target, groups, epsilon, spec.bootstrap_config(seed),
            direction=spec.direction, rescaled=spec.rescaled
        )
        truth = _interval_truth(spec, sample, groups)
        certified = np.zeros(len(groups), dtype=bool)
        certified[report.table['group_index'].to_numpy()] = report.table['decision'].to_numpy()
        if spec.direction == 'below':
            certifiable = truth < epsilon
        else:
            certifiable = truth > epsilon
        num_certifiable = certifiable.sum()
        power = (certified & certifiable).sum() / num_certifiable if num_certifiable else np.nan
        return bool((certified & ~certifiable).any()), power, int(certified.sum())

    rows = []
    for n in spec.n_grid:
        results = _run_trials(trial, spec, n)
        fwer = float(np.mean([result[0] for result in results]))
        power, power_se = _mean_and_se([result[1] for result in results])
        rows.append({
            'n': n, 'trials': spec.trials, 'fwer': fwer,
            'fwer_se': _binomial_se(fwer, spec.trials), 'power': power, 'power_se': power_se,
            'mean_certified': float(np.mean([result[2] for result in results]))
        })
    return pd.DataFrame(rows)


def run_coverage(spec):
    """
    Estimates the simultaneous coverage of interval bounds and their power.

    With side 'upper', a trial is covered when every upper bound is at least
    the true disparity, and the power at a tolerance epsilon is the fraction
    of intervals with truth below epsilon whose upper bound is also below
    epsilon. Side 'lower' mirrors both definitions.

    Parameters
    ----------
    spec : ExperimentSpec
        The experiment settings.

    Returns
    -------
    pd.DataFrame
        One row per n with the columns n, trials, coverage, coverage_se, and
        power_<epsilon> and power_<epsilon>_se for each tolerance.

    """

    target = TargetSpec.fixed(0.0)
    bound_function = upper_bounds if spec.side == 'upper' else lower_bounds

    def trial(n, index):
        seed = trial_seed(spec.seed, index)
        sample = _sample(spec, n, seed)
        groups = interval_grid(sample.trail, 'x', spec.endpoints)
        report = bound_function(
            sample.trail, target, groups, spec.bootstrap_config(seed), rescaled=spec.rescaled
        )
        truth = _interval_truth(spec, sample, groups)
        bounds = np.full(len(groups), np.nan)
        bounds[report.table['group_index'].to_numpy()] = report.table[spec.side].to_numpy()
        reported = np.isfinite(bounds)
        if spec.side == 'upper':
            covered = np.all(bounds[reported] >= truth[reported])
        else:
            covered = np.all(bounds[reported] <= truth[reported])

        powers = []
        for epsilon in spec.epsilons:
            if spec.side == 'upper':
                candidates = truth < epsilon
                excluded = reported & (bounds < epsilon)
            else:
                candidates = truth > epsilon
                excluded = reported & (bounds > epsilon)
            count = candidates.sum()
            powers.append((candidates & excluded).sum() / count if count else np.nan)
        return bool(covered), powers

    rows = []
    for n in spec.n_grid:
        results = _run_trials(trial, spec, n)
        coverage = float(np.mean([result[0] for result in results]))
        row = {
            'n': n, 'trials': spec.trials, 'coverage': coverage,
            'coverage_se': _binomial_se(coverage, spec.trials)
        }
        for position, epsilon in enumerate(spec.epsilons):
            power, power_se = _mean_and_se([result[1][position] for result in results])
            row[f'power_{epsilon:g}'] = power
            row[f'power_{epsilon:g}_se'] = power_se
        rows.append(row)
    return pd.DataFrame(rows)


def run_fdr(spec):
    """
    Estimates the false discovery rate and power of flagged disjoint groups.

    The first n_nonnull of the num_groups groups have loss rate nonnull_mean
    and the rest null_mean. A group is non-null when its true disparity
    (mean - theta) exceeds epsilon.

    Parameters
    ----------
    spec : ExperimentSpec
        The experiment settings.

    Returns
    -------
    pd.DataFrame
        One row per n with the columns n, trials, fdr, fdr_se, power,
        power_se, and mean_flags.

    """

    means = np.full(spec.num_groups, spec.null_mean)
    means[:spec.n_nonnull] = spec.nonnull_mean
    nonnull = means - spec.theta > spec.epsilon + 1e-12
    target = TargetSpec.fixed(spec.theta)

    def trial(n, index):
        seed = trial_seed(spec.seed, index)
        trail = bernoulli_groups(n, means, seed=seed)
        groups = ExplicitGroups.from_labels(trail.labels('group'))
        report = flag_p_values(
            trail, target, groups, spec.epsilon, spec.bootstrap_config(seed), direction='greater'
        )
        group_ids = np.array([int(name[1:]) for name in report.table['name']], dtype=int)
        flagged = report.table['flagged'].to_numpy()
        num_flags = int(flagged.sum())
        false_flags = int((flagged & ~nonnull[group_ids]).sum())
        if spec.n_nonnull:
            power = (flagged & nonnull[group_ids]).sum() / spec.n_nonnull
        else:
            power = np.nan
        return false_flags / max(num_flags, 1), power, num_flags

    rows = []
    for n in spec.n_grid:
        results = _run_trials(trial, spec, n)
        fdr, fdr_se = _mean_and_se([result[0] for result in results])
        power, power_se = _mean_and_se([result[1] for result in results])
        rows.append({
            'n': n, 'trials': spec.trials, 'fdr': fdr, 'fdr_se': fdr_se, 'power': power,
            'power_se': power_se, 'mean_flags': float(np.mean([result[2] for result in results]))
        })
    return pd.DataFrame(rows)


def run_rkhs_percentile(spec):
    """
    Estimates how often the RKHS critical value dominates the population supremum.

    Each trial draws a slope, fits it on the discrete model, and for every
    bandwidth compares t* with the exact supremum of the shift process over
    the model's 101 atoms, using the fixed target 0.

    Parameters
    ----------
    spec : ExperimentSpec
        The experiment settings.

    Returns
    -------
    pd.DataFrame
        One row per (n, bandwidth) with the columns n, bandwidth, trials,
        percentile, and percentile_se.

    """

    target = TargetSpec.fixed(0.0)
    kernels = [KernelSpec('gaussian', bandwidth, ['x']) for bandwidth in spec.bandwidths]

    def trial(n, index):
        seed = trial_seed(spec.seed, index)
        sample = _sample(spec, n, seed)
        atoms, probabilities, means = population_atoms(sample.beta0, sample.beta_hat)
        config = spec.bootstrap_config(seed)
        covered = []
        for kernel in kernels:
            critical = rkhs_critical_value(sample.trail, target, kernel, config)
            supremum = population_sup_discrete(
                atoms, probabilities, means, sample.trail, kernel, 0.0
            )
            covered.append(supremum <= critical.t_star)
        return covered

    rows = []
    for n in spec.n_grid:
        results = np.array(_run_trials(trial, spec, n), dtype=bool)
        for position, bandwidth in enumerate(spec.bandwidths):
            percentile = float(results[:, position].mean())
            rows.append({
                'n': n, 'bandwidth': bandwidth, 'trials': spec.trials, 'percentile': percentile,
                'percentile_se': _binomial_se(percentile, spec.trials)
            })
    return pd.DataFrame(rows)


def run_experiment(spec):
    """
    Runs the experiment named by an ExperimentSpec.

    Returns
    -------
    pd.DataFrame
        The results table of the experiment.

    """

    runners = {
        'fwer': run_fwer, 'coverage': run_coverage, 'fdr': run_fdr,
        'rkhs_percentile': run_rkhs_percentile
    }
    return runners[spec.experiment](spec)
