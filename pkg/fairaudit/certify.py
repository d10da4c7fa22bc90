# -*- coding: utf-8 -*-
"""Simultaneous confidence bounds and FWER-controlled Boolean certificates.

Bounds come in three sides (lower, upper, two-sided) and two flavors: the
unscaled process, whose bound is eps_hat(G) - t* / P_n(G)^2, and the
rescaled process, whose bound is eps_hat(G) - t* * s_hat(G) / P_n(G)^2.

Boolean certificates test a tolerance eps for every group at once:
    above: certify eps(G) > eps when eps_hat(G) >= eps + t* * s_hat(G) / P_n(G)
    below: certify eps(G) < eps when eps_hat(G) <= eps - t* * s_hat(G) / P_n(G)
    bioequivalence: certify |eps(G)| < eps when both one-sided tests reject

The unscaled Boolean process is linear in the group indicator, so over an
interval grid its maximum is a maximum-subarray problem over the grid cells.

"""

import logging
import warnings

import numpy as np
import pandas as pd

from .audit_trail import MomentCache, TargetSpec, resolve_target, shrinkage_scale
from .bootstrap import (
    QUANTILE_CONVENTION, ReplicateStats, bootstrap_statistics, quantile, replicate_statistic
)
from .groups import IntervalGroups, multicalibration_expand
from .utils import AuditInputError, DegenerateDataError


logger = logging.getLogger(__name__)

__all__ = [
    'CertificationReport', 'lower_bounds', 'upper_bounds', 'two_sided_bounds',
    'boolean_certify', 'interval_max_subarray', 'width_curve',
    'multicalibration_gamma_bounds', 'equalized_odds_bounds'
]

BOUND_SIDES = ('lower', 'upper', 'two_sided')
DIRECTIONS = ('above', 'below', 'bioequivalence')


class CertificationReport:
    """
    The per-group results and global settings of a certification run.

    Parameters
    ----------
    table : pd.DataFrame
        One row per non-empty group with the columns name, group_index, count,
        p_n, eps_hat, s_hat, and, depending on the mode, lower, upper,
        decision, and margin columns.
    mode : str
        'lower', 'upper', 'two_sided', or 'boolean'.
    critical_values : dict(str, float)
        The critical value t* of each bootstrap process that was run, keyed
        by the process name ('lower', 'upper', 'two_sided', 'above', 'below').
    alpha : float
        The error level.
    rescaled : bool
        Whether the rescaled process was used.
    config : dict
        The bootstrap configuration echo.
    target : dict
        The target description and the resolved theta_hat.
    flags : dict
        Degeneracy flags and counts.
    excluded : list(str)
        The names of groups with no records, excluded from the run.
    epsilon : float, optional
        The Boolean tolerance.
    direction : str, optional
        The Boolean direction.

    Attributes
    ----------
    replicate_maxima : dict(str, np.ndarray)
        The bootstrap maxima behind each critical value. Not serialized.

    """

    def __init__(self, table, *, mode, critical_values, alpha, rescaled, config, target,
                 flags, excluded, epsilon=None, direction=None):
        self.table = table
        self.mode = mode
        self.critical_values = dict(critical_values)
        self.alpha = alpha
        self.rescaled = rescaled
        self.config = config
        self.target = target
        self.flags = flags
        self.excluded = list(excluded)
        self.epsilon = epsilon
        self.direction = direction
        self.replicate_maxima = {}


    def __str__(self):
        return (
            f'{self.__class__.__name__}(mode={self.mode}, groups={len(self.table)}, '
            f't_star={self.critical_values})'
        )


    def __repr__(self):
        return str(self)


    def __len__(self):
        return len(self.table)


    @property
    def t_star(self):
        """float: the critical value; for bioequivalence, the one of the 'below' test."""
        if self.mode == 'boolean' and self.direction == 'bioequivalence':
            return self.critical_values['below']
        return next(iter(self.critical_values.values()))


    def to_frame(self):
        """Returns a copy of the per-group table."""
        return self.table.copy()


    def to_dict(self):
        """
        Returns a JSON-friendly dictionary holding every field of the report.

        Per-group records are listed in group order; the bootstrap maxima are
        left out.

        """

        return {
            'procedure': 'certify' if self.mode == 'boolean' else f'bounds-{self.mode}',
            'mode': self.mode,
            'direction': self.direction,
            'epsilon': self.epsilon,
            'alpha': self.alpha,
            'rescaled': self.rescaled,
            'critical_values': self.critical_values,
            'quantile_convention': QUANTILE_CONVENTION,
            'config': self.config,
            'target': self.target,
            'flags': self.flags,
            'excluded_groups': {'count': len(self.excluded), 'names': self.excluded},
            'groups': self.table.to_dict(orient='records'),
        }


    def check_consistency(self, rtol=1e-12):
        """
        Recomputes every bound and decision from the stored fields.

        Parameters
        ----------
        rtol : float, optional
            The relative tolerance for recomputed bounds. Default is 1e-12.

        Returns
        -------
        bool
            True if all stored bounds and decisions match the recomputation.

        """

        table = self.table
        eps_hat = table['eps_hat'].to_numpy()
        p_n = table['p_n'].to_numpy()
        scale = table['s_hat'].to_numpy()

        if self.mode == 'boolean':
            margins = _boolean_margins(
                eps_hat, p_n, scale, self.epsilon, self.direction, self.critical_values
            )
            margin = margins['margin']
            return bool(
                np.allclose(table['margin'].to_numpy(), margin, rtol=rtol, atol=rtol)
                and np.array_equal(table['decision'].to_numpy(), margin >= 0)
            )

        width = self.t_star * scale / p_n**2
        checks = []
        if 'lower' in table:
            checks.append(np.allclose(table['lower'].to_numpy(), eps_hat - width, rtol=rtol, atol=rtol))
        if 'upper' in table:
            checks.append(np.allclose(table['upper'].to_numpy(), eps_hat + width, rtol=rtol, atol=rtol))
        if self.t_star >= 0 and 'lower' in table and 'upper' in table:
            checks.append(bool(np.all(table['lower'] <= table['eps_hat'])))
            checks.append(bool(np.all(table['eps_hat'] <= table['upper'])))
        return all(checks)


class _AuditContext:
    """
    Everything computed once from the original sample before bootstrapping.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    groups : GroupCollection
        The groups.
    config : BootstrapConfig
        The resampling configuration.
    rescaled : bool
        Whether the per-group scale s_hat is needed.

    """

    def __init__(self, trail, target, groups, config, rescaled):
        if groups.n != trail.n:
            raise AuditInputError(
                f'The groups cover {groups.n} records, but the audit trail has {trail.n}.'
            )
        self.trail = trail
        self.target = target
        self.groups = groups
        self.config = config
        self.rescaled = rescaled
        self.theta_hat, self.psi = resolve_target(trail, target)
        self.moments = MomentCache(trail, groups, self.theta_hat, self.psi)
        self.active = np.flatnonzero(self.moments.counts > 0)
        self.excluded = [groups.names[i] for i in np.flatnonzero(self.moments.counts == 0)]
        self.excluded = list(groups.dropped) + self.excluded
        self.flags = {}

        if rescaled:
            if self.moments.total_var_loss <= 0:
                raise DegenerateDataError('degenerate loss: zero pooled variance')
            self.scale = shrinkage_scale(
                self.moments.p_n, self.moments.sigma, self.moments.total_var_loss,
                config.p_star, config.w0
            )
            clamped = self.moments.sigma_clamped[self.active]
            if clamped.any():
                names = [groups.names[i] for i in self.active[clamped]]
                self.flags['sigma_clamped'] = names
                warnings.warn(
                    f'The variance estimate was negative and clamped to 0 for {len(names)} group(s).',
                    stacklevel=3
                )
        else:
            self.scale = np.ones(len(groups))

        degenerate = self.moments.degenerate[self.active]
        if degenerate.any():
            self.flags['degenerate_groups'] = [groups.names[i] for i in self.active[degenerate]]
        if target.kind == 'custom':
            self.flags['custom_psi_mean'] = float(np.mean(self.psi))
        self.fallbacks = 0


    def target_echo(self):
        """The target description plus the resolved estimate."""
        output = self.target.to_dict()
        output['theta_hat'] = self.theta_hat
        return output


    def resample(self, weights):
        """Resamples the target, returning theta* and the per-replicate fallback mask."""
        return self.target.resample_theta(weights, self.trail.loss, self.theta_hat, self.psi)


    def contributions(self, weights, theta_star, epsilon):
        """
        The per-record terms of the Boolean process.

        a_i = (1/n) * [w_i * (L_i - theta* - eps) - (L_i - theta_hat - eps)], so that
        the sum over G is P*(G) * (eps*(G) - eps) - P_n(G) * (eps_hat(G) - eps).

        """

        loss = self.trail.loss
        original = loss - self.theta_hat - epsilon
        resampled = weights * (loss - theta_star[:, None] - epsilon)
        return (resampled - original) / self.trail.n


    def critical_value(self, statistic, name):
        """
        Bootstraps the maxima of a process and returns its (1 - alpha) quantile.

        Parameters
        ----------
        statistic : Callable
            Maps (weights, theta_star) to the per-replicate maxima.
        name : str
            The process name used in logs and flags.

        Returns
        -------
        t_star : float
            The critical value.
        maxima : np.ndarray
            The per-replicate maxima.

        """

        def block(weights, replicates):
            theta_star, fallbacks = self.resample(weights)
            return np.column_stack((statistic(weights, theta_star), fallbacks))

        output = bootstrap_statistics(block, self.trail.n, self.config, label=name)
        maxima = output[:, 0]
        fallbacks = int(output[:, 1].sum())
        if fallbacks:
            self.flags['reference_fallbacks'] = max(self.flags.get('reference_fallbacks', 0), fallbacks)
            warnings.warn(
                f'The reference group was empty in {fallbacks} bootstrap replicate(s); '
                'theta_hat was reused for them.', stacklevel=3
            )
        if np.all(np.abs(maxima) <= 1e-12):
            self.flags.setdefault('vacuous_certification', []).append(name)
            warnings.warn('vacuous certification', stacklevel=3)

        t_star = quantile(1 - self.config.alpha, maxima)
        logger.info('%s: t* = %.6g from %d replicates', name, t_star, maxima.size)
        return t_star, maxima


    def base_table(self):
        """The per-group columns shared by every report."""
        moments = self.moments
        active = self.active
        return pd.DataFrame({
            'name': [self.groups.names[i] for i in active],
            'group_index': active,
            'count': moments.counts[active],
            'p_n': moments.p_n[active],
            'eps_hat': moments.eps_hat[active],
            's_hat': self.scale[active],
        })


def _bound_process(context, side):
    """Builds the replicate-maximum function of the bound process for one side."""
    kind = 'lower_rescaled' if context.rescaled else 'lower'
    sign = -1.0 if side == 'upper' else 1.0
    absolute = side == 'two_sided'
    loss = context.trail.loss

    def statistic(weights, theta_star):
        stats = ReplicateStats(weights, loss, context.groups, theta_star)
        values = replicate_statistic(
            kind, stats, context.moments, scale=context.scale, sign=sign, absolute=absolute
        )
        return values[:, context.active].max(axis=1)

    return statistic


def _bounds(trail, target, groups, config, rescaled, side):
    """Shared implementation of the three bound sides."""
    if side not in BOUND_SIDES:
        raise AuditInputError(f'Bound side must be one of {BOUND_SIDES}, not "{side}".')

    context = _AuditContext(trail, target, groups, config, rescaled)
    t_star, maxima = context.critical_value(_bound_process(context, side), side)

    table = context.base_table()
    width = t_star * table['s_hat'].to_numpy() / table['p_n'].to_numpy()**2
    if side in ('lower', 'two_sided'):
        table['lower'] = table['eps_hat'] - width
    if side in ('upper', 'two_sided'):
        table['upper'] = table['eps_hat'] + width

    report = CertificationReport(
        table, mode=side, critical_values={side: t_star}, alpha=config.alpha,
        rescaled=rescaled, config=config.to_dict(), target=context.target_echo(),
        flags=context.flags, excluded=context.excluded
    )
    report.replicate_maxima[side] = maxima
    return report


def lower_bounds(trail, target, groups, config, rescaled=False):
    """
    Simultaneous lower confidence bounds on the disparity of every group.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    groups : GroupCollection
        The groups to bound.
    config : BootstrapConfig
        The resampling configuration.
    rescaled : bool, optional
        If True, uses the rescaled process with the shrinkage scale s_hat(G);
        otherwise s_hat(G) = 1. Default is False.

    Returns
    -------
    CertificationReport
        With a 'lower' column equal to eps_hat(G) - t* * s_hat(G) / P_n(G)^2.

    Raises
    ------
    DegenerateDataError
        Raised if rescaled is True and the pooled loss variance is zero.

    Warns
    -----
    UserWarning
        'vacuous certification' if every bootstrap maximum is zero.

    """

    return _bounds(trail, target, groups, config, rescaled, 'lower')


def upper_bounds(trail, target, groups, config, rescaled=False):
    """
    Simultaneous upper confidence bounds, eps_hat(G) + t* * s_hat(G) / P_n(G)^2.

    The critical value bootstraps the maximum of the negated process. See
    :func:`lower_bounds` for the parameters.

    """

    return _bounds(trail, target, groups, config, rescaled, 'upper')


def two_sided_bounds(trail, target, groups, config, rescaled=False):
    """
    Simultaneous two-sided intervals, eps_hat(G) -/+ t* * s_hat(G) / P_n(G)^2.

    The critical value bootstraps the maximum of the absolute process. See
    :func:`lower_bounds` for the parameters.

    """

    return _bounds(trail, target, groups, config, rescaled, 'two_sided')


def _max_gains(prefix):
    """
    For each stop k >= 1, the best run ending at k: prefix[k] - min(prefix[:k]).

    Works along the last axis, so rows of replicates are handled at once.

    """

    running_min = np.minimum.accumulate(prefix[..., :-1], axis=-1)
    return prefix[..., 1:] - running_min


def interval_max_subarray(values):
    """
    The maximum sum over all non-empty contiguous runs of values.

    Parameters
    ----------
    values : array-like, shape (m,)
        The per-position contributions, ordered by the interval covariate.
        Positions may be single records or whole grid cells.

    Returns
    -------
    best : float
        The maximum run sum.
    run : tuple(int, int)
        The 0-based (start, stop) positions of one maximizing run, with
        stop exclusive.

    Raises
    ------
    AuditInputError
        Raised if values is empty.

    Notes
    -----
    Runs in linear time using prefix sums: the best run ending at k starts
    right after the smallest prefix sum before k.

    """

    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise AuditInputError('interval_max_subarray needs at least one value.')
    prefix = np.concatenate(([0.0], np.cumsum(values)))
    gains = _max_gains(prefix)
    stop = int(np.argmax(gains))
    start = int(np.argmin(prefix[:stop + 1]))
    return float(gains[stop]), (start, stop + 1)


def _boolean_process(context, epsilon, sign, fast_path):
    """Builds the replicate-maximum function of one one-sided Boolean process."""
    groups = context.groups
    use_fast_path = (
        fast_path and not context.rescaled and isinstance(groups, IntervalGroups)
    )
    if use_fast_path:
        nonempty = groups.nonempty_buckets()

    def statistic(weights, theta_star):
        contributions = sign * context.contributions(weights, theta_star, epsilon)
        if use_fast_path:
            cells = groups.bucket_sums(contributions)[:, nonempty]
            prefix = np.concatenate((np.zeros((cells.shape[0], 1)), np.cumsum(cells, axis=1)), axis=1)
            return _max_gains(prefix).max(axis=1)

        group_values = groups.group_sums(contributions)
        if context.rescaled:
            group_values = group_values / context.scale
        return group_values[:, context.active].max(axis=1)

    return statistic


def _boolean_margins(eps_hat, p_n, scale, epsilon, direction, critical_values):
    """Evaluates the rejection rule(s) of a Boolean certificate."""
    output = {}
    if direction == 'above':
        output['margin'] = eps_hat - epsilon - critical_values['above'] * scale / p_n
    elif direction == 'below':
        output['margin'] = epsilon - eps_hat - critical_values['below'] * scale / p_n
    else:
        output['margin_below'] = epsilon - eps_hat - critical_values['below'] * scale / p_n
        output['margin_above'] = eps_hat + epsilon - critical_values['above'] * scale / p_n
        output['margin'] = np.minimum(output['margin_below'], output['margin_above'])
    return output


def boolean_certify(trail, target, groups, epsilon, config, direction='above', rescaled=False,
                    fast_path=True):
    """
    FWER-controlled Boolean certificates that each group's disparity clears a tolerance.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    groups : GroupCollection
        The groups to certify.
    epsilon : float
        The tolerance.
    config : BootstrapConfig
        The resampling configuration.
    direction : {'above', 'below', 'bioequivalence'}, optional
        'above' certifies eps(G) > epsilon, 'below' certifies eps(G) < epsilon,
        and 'bioequivalence' certifies |eps(G)| < epsilon by running the 'below'
        test at epsilon and the 'above' test at -epsilon, each at level alpha.
        Default is 'above'.
    rescaled : bool, optional
        If True, uses the rescaled process. Default is False.
    fast_path : bool, optional
        If True (default), the unscaled process over an interval grid is
        maximized with a maximum-subarray scan over the grid cells instead of
        enumerating every interval. Both give identical results.

    Returns
    -------
    CertificationReport
        With 'decision' and 'margin' columns; the margin is
        eps_hat - epsilon - t* * s_hat / P_n for 'above' (mirrored for
        'below'), and the smaller of the two margins for 'bioequivalence'.

    Raises
    ------
    AuditInputError
        Raised if direction is unknown or epsilon is NaN.
    DegenerateDataError
        Raised if rescaled is True and the pooled loss variance is zero.

    """

    if direction not in DIRECTIONS:
        raise AuditInputError(f'Direction must be one of {DIRECTIONS}, not "{direction}".')
    epsilon = float(epsilon)
    if np.isnan(epsilon):
        raise AuditInputError('epsilon must be a number, not NaN.')

    context = _AuditContext(trail, target, groups, config, rescaled)
    # the process is bootstrapped at 0 for an infinite tolerance; the margins stay infinite
    finite_epsilon = epsilon if np.isfinite(epsilon) else 0.0

    critical_values = {}
    maxima = {}
    if direction in ('above', 'bioequivalence'):
        test_epsilon = finite_epsilon if direction == 'above' else -finite_epsilon
        critical_values['above'], maxima['above'] = context.critical_value(
            _boolean_process(context, test_epsilon, 1.0, fast_path), 'above'
        )
    if direction in ('below', 'bioequivalence'):
        critical_values['below'], maxima['below'] = context.critical_value(
            _boolean_process(context, finite_epsilon, -1.0, fast_path), 'below'
        )

    table = context.base_table()
    margins = _boolean_margins(
        table['eps_hat'].to_numpy(), table['p_n'].to_numpy(), table['s_hat'].to_numpy(),
        epsilon, direction, critical_values
    )
    for key, value in margins.items():
        table[key] = value
    table['decision'] = table['margin'] >= 0
    logger.info('certified %d of %d groups (%s)', int(table['decision'].sum()), len(table), direction)

    report = CertificationReport(
        table, mode='boolean', critical_values=critical_values, alpha=config.alpha,
        rescaled=rescaled, config=config.to_dict(), target=context.target_echo(),
        flags=context.flags, excluded=context.excluded, epsilon=epsilon, direction=direction
    )
    report.replicate_maxima.update(maxima)
    return report


def width_curve(report, groups):
    """
    Summarizes an interval-grid report by interval width.

    Parameters
    ----------
    report : CertificationReport
        A report produced over `groups`.
    groups : IntervalGroups
        The interval grid.

    Returns
    -------
    pd.DataFrame
        One row per width with the columns width, intervals, min_eps_hat and,
        when present in the report, min_lower and max_upper.

    Raises
    ------
    AuditInputError
        Raised if groups is not an interval grid.

    """

    if not isinstance(groups, IntervalGroups):
        raise AuditInputError('A width curve needs an interval grid.')

    table = report.table
    widths = np.round(groups.widths()[table['group_index'].to_numpy()], 12)
    frame = table.assign(width=widths)
    aggregations = {'intervals': ('name', 'size'), 'min_eps_hat': ('eps_hat', 'min')}
    if 'lower' in frame:
        aggregations['min_lower'] = ('lower', 'min')
    if 'upper' in frame:
        aggregations['max_upper'] = ('upper', 'max')
    return frame.groupby('width', sort=True).agg(**aggregations).reset_index()


def multicalibration_gamma_bounds(trail, base, prediction_bins, config, rescaled=False):
    """
    Simultaneous upper bounds on each base group's multicalibration error.

    The loss must be L = Y - f(X) and the target is fixed at 0. Two-sided
    intervals are built over every cell G@v, and each base group's bound is
    the largest absolute interval endpoint over its cells.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail, with the residual as loss.
    base : ExplicitGroups
        The base groups.
    prediction_bins : str
        The categorical column holding the binned predictions.
    config : BootstrapConfig
        The resampling configuration.
    rescaled : bool, optional
        Whether to use the rescaled process. Default is False.

    Returns
    -------
    report : CertificationReport
        The two-sided report over the cells.
    summary : pd.DataFrame
        Columns name, cells, gamma_upper for each base group with at least
        one non-empty cell.

    """

    expanded = multicalibration_expand(base, trail, prediction_bins)
    report = two_sided_bounds(trail, TargetSpec.fixed(0.0), expanded, config, rescaled)
    table = report.table
    parents = [expanded.parents[i] for i in table['group_index']]
    worst = np.maximum(table['lower'].abs(), table['upper'].abs())
    summary = (
        pd.DataFrame({'name': parents, 'gamma': worst})
        .groupby('name', sort=False)
        .agg(cells=('gamma', 'size'), gamma_upper=('gamma', 'max'))
        .reset_index()
    )
    return report, summary


def equalized_odds_bounds(trail, groups, config, outcome='y', rescaled=False):
    """
    Simultaneous equalized-odds error bounds by auditing both outcome strata.

    The loss must be L = 1{f(X) = 1}. Within each stratum Y = y, the target
    is the stratum mean (the false or true positive rate), and two-sided
    intervals are built at level alpha / 2 so that both strata hold jointly
    at level alpha.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    groups : GroupCollection
        The groups over X.
    config : BootstrapConfig
        The resampling configuration.
    outcome : str, optional
        The binary outcome column. Default is 'y'.
    rescaled : bool, optional
        Whether to use the rescaled process. Default is False.

    Returns
    -------
    reports : dict(int, CertificationReport)
        The two-sided report of each stratum.
    summary : pd.DataFrame
        Columns name, strata, max_abs_bound: the largest absolute interval
        endpoint of each group over the strata in which it is non-empty.

    """

    y = trail.binary_column(outcome)
    stratum_config = config.replace(alpha=config.alpha / 2)
    reports = {}
    rows = []
    for stratum in (0, 1):
        mask = y == stratum
        if not mask.any():
            logger.warning('Outcome stratum %s=%d is empty and was skipped.', outcome, stratum)
            continue
        report = two_sided_bounds(
            trail.subset(mask), TargetSpec.pooled_mean(), groups.restrict(mask),
            stratum_config, rescaled
        )
        reports[stratum] = report
        table = report.table
        worst = np.maximum(table['lower'].abs(), table['upper'].abs())
        rows.append(pd.DataFrame({'name': table['name'], 'stratum': stratum, 'bound': worst}))

    if not rows:
        raise AuditInputError(f'Both strata of "{outcome}" are empty.')
    summary = (
        pd.concat(rows, ignore_index=True)
        .groupby('name', sort=False)
        .agg(strata=('stratum', lambda values: ','.join(str(v) for v in values)),
             max_abs_bound=('bound', 'max'))
        .reset_index()
    )
    return reports, summary
