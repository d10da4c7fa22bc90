# -*- coding: utf-8 -*-
"""FDR-controlled flagging of groups with harmful disparities.

Each group gets a bootstrap p-value built from the median absolute
deviation of its replicate deltas eps*(G) - eps_hat(G), and the
Benjamini-Hochberg step-up rule selects the flagged groups.

Notes
-----
The MAD is turned into a normal scale by dividing by the 3/4 quantile of the
standard normal, Phi^-1(3/4) ~ 0.6744898, so s*(G) estimates the standard
deviation of eps_hat(G).

FDR control is only established for a known target with one-sided nulls
when the groups are disjoint or the loss is binary. Any other mode is still
run, but its reports are labeled 'heuristic FDR'.

"""

import logging
import warnings

import numpy as np
import pandas as pd
from scipy import stats

from .audit_trail import TargetSpec
from .bootstrap import QUANTILE_CONVENTION, ReplicateStats, bootstrap_statistics, replicate_statistic
from .certify import _AuditContext
from .groups import multicalibration_expand
from .utils import AuditInputError, validate_level


logger = logging.getLogger(__name__)

__all__ = [
    'FlagReport', 'flag_p_values', 'benjamini_hochberg', 'mad_scale', 'mad_p_values',
    'equalized_odds_flag', 'multicalibration_flag', 'flag_grid', 'NORMAL_MAD_CONSTANT'
]

NORMAL_MAD_CONSTANT = stats.norm.ppf(0.75)
P_VALUE_DIRECTIONS = ('greater', 'less', 'two_sided')


class FlagReport:
    """
    The per-group p-values and Benjamini-Hochberg decisions of a flagging run.

    Parameters
    ----------
    table : pd.DataFrame
        One row per tested group with at least the columns name, count,
        eps_hat, s_star, p_value, missing_replicates, degenerate, and flagged.
        Recipe runs add the columns parent and, for equalized odds, stratum.
    alpha : float
        The FDR level.
    epsilon : float
        The tolerance tested.
    direction : str
        'greater', 'less', or 'two_sided'.
    fdr_mode : str
        'controlled' or 'heuristic FDR'.
    config : dict
        The bootstrap configuration echo.
    target : dict
        The target description(s).
    flags : dict
        Degeneracy flags and counts.
    recipe : str, optional
        'standard', 'equalized_odds', or 'multicalibration'. Default is 'standard'.

    """

    def __init__(self, table, *, alpha, epsilon, direction, fdr_mode, config, target, flags,
                 recipe='standard'):
        self.table = table
        self.alpha = alpha
        self.epsilon = epsilon
        self.direction = direction
        self.fdr_mode = fdr_mode
        self.config = config
        self.target = target
        self.flags = flags
        self.recipe = recipe


    def __str__(self):
        return (
            f'{self.__class__.__name__}(recipe={self.recipe}, groups={len(self.table)}, '
            f'flagged={int(self.table["flagged"].sum())})'
        )


    def __repr__(self):
        return str(self)


    def __len__(self):
        return len(self.table)


    def flagged_names(self):
        """list(str): the names of the flagged rows."""
        return self.table.loc[self.table['flagged'], 'name'].tolist()


    def group_flags(self):
        """
        Aggregates recipe rows by their base group.

        Returns
        -------
        pd.DataFrame
            Columns name, flagged, and triggered_by (the names of the flagged
            rows, joined with '; '). For a standard report, one row per group.

        """

        table = self.table
        parents = table['parent'] if 'parent' in table else table['name']
        output = {}
        for parent, name, flagged in zip(parents, table['name'], table['flagged']):
            triggers = output.setdefault(parent, [])
            if flagged:
                triggers.append(name)
        return pd.DataFrame({
            'name': list(output),
            'flagged': [bool(triggers) for triggers in output.values()],
            'triggered_by': ['; '.join(triggers) for triggers in output.values()],
        })


    def to_frame(self):
        """Returns a copy of the per-group table."""
        return self.table.copy()


    def to_dict(self):
        """Returns a JSON-friendly dictionary holding every field of the report."""
        return {
            'procedure': 'flag',
            'recipe': self.recipe,
            'alpha': self.alpha,
            'epsilon': self.epsilon,
            'direction': self.direction,
            'fdr_mode': self.fdr_mode,
            'mad_constant': NORMAL_MAD_CONSTANT,
            'quantile_convention': QUANTILE_CONVENTION,
            'config': self.config,
            'target': self.target,
            'flags': self.flags,
            'groups': self.table.to_dict(orient='records'),
        }


    def check_consistency(self):
        """bool: True if the stored decisions equal BH applied to the stored p-values."""
        rejected = benjamini_hochberg(self.table['p_value'].to_numpy(), self.alpha)
        return bool(np.array_equal(rejected, self.table['flagged'].to_numpy()))


def benjamini_hochberg(pvals, alpha):
    """
    The Benjamini-Hochberg step-up selection.

    Parameters
    ----------
    pvals : array-like
        The p-values, each in [0, 1].
    alpha : float
        The FDR level, in (0, 1).

    Returns
    -------
    np.ndarray(bool)
        True for each rejected hypothesis: with p_(k) the sorted p-values and
        k* = max{k : p_(k) <= k * alpha / m}, every p-value <= p_(k*) is
        rejected (none if no such k exists).

    Raises
    ------
    AuditInputError
        Raised if any p-value is outside of [0, 1] or NaN.

    """

    alpha = validate_level(alpha)
    pvals = np.asarray(pvals, dtype=float).ravel()
    if np.isnan(pvals).any() or np.any((pvals < 0) | (pvals > 1)):
        raise AuditInputError('p-values must all be within [0, 1].')
    total = pvals.size
    if total == 0:
        return np.zeros(0, dtype=bool)

    ordered = np.sort(pvals)
    passing = np.flatnonzero(ordered <= alpha * np.arange(1, total + 1) / total)
    if passing.size == 0:
        return np.zeros(total, dtype=bool)
    return pvals <= ordered[passing[-1]]


def mad_scale(deltas):
    """
    The normal-consistent median absolute deviation of replicate deltas.

    Parameters
    ----------
    deltas : array-like, shape (B,) or (B, groups)
        The replicate deltas; NaN entries (replicates that missed the group)
        are ignored.

    Returns
    -------
    float or np.ndarray
        median(|delta|) / Phi^-1(3/4) for each column; NaN for a column with
        no finite entries.

    """

    deltas = np.abs(np.asarray(deltas, dtype=float))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        output = np.nanmedian(deltas, axis=0) / NORMAL_MAD_CONSTANT
    return float(output) if np.ndim(output) == 0 else output


def mad_p_values(eps_hat, s_star, epsilon, direction='greater'):
    """
    Normal-approximation p-values from the MAD scale.

    Parameters
    ----------
    eps_hat : array-like
        The disparity estimates.
    s_star : array-like
        The MAD scales; a zero (or NaN) scale is a degenerate group.
    epsilon : float
        The tolerance.
    direction : {'greater', 'less', 'two_sided'}, optional
        'greater' tests H0: eps(G) <= epsilon with p = 1 - Phi((eps_hat - epsilon)/s*);
        'less' tests H0: eps(G) >= -epsilon with p = Phi((eps_hat + epsilon)/s*);
        'two_sided' tests H0: |eps(G)| <= epsilon with the smaller of the two.
        Default is 'greater'.

    Returns
    -------
    p_values : np.ndarray
        The p-values used for the decisions.
    details : dict(str, np.ndarray)
        'p_greater' and/or 'p_less', plus 'degenerate', a boolean mask of the
        groups whose scale was zero; those get p = 1 if their estimate is on
        the null side of the tolerance and p = 0 otherwise.

    """

    if direction not in P_VALUE_DIRECTIONS:
        raise AuditInputError(f'Direction must be one of {P_VALUE_DIRECTIONS}, not "{direction}".')
    eps_hat = np.asarray(eps_hat, dtype=float)
    s_star = np.asarray(s_star, dtype=float)
    degenerate = ~(s_star > 0)
    safe_scale = np.where(degenerate, 1.0, s_star)

    details = {'degenerate': degenerate}
    if direction in ('greater', 'two_sided'):
        details['p_greater'] = np.where(
            degenerate, np.where(eps_hat <= epsilon, 1.0, 0.0),
            stats.norm.sf((eps_hat - epsilon) / safe_scale)
        )
    if direction in ('less', 'two_sided'):
        details['p_less'] = np.where(
            degenerate, np.where(eps_hat >= -epsilon, 1.0, 0.0),
            stats.norm.cdf((eps_hat + epsilon) / safe_scale)
        )

    if direction == 'greater':
        p_values = details['p_greater']
    elif direction == 'less':
        p_values = details['p_less']
    else:
        p_values = np.minimum(details['p_greater'], details['p_less'])
    return p_values, details


def _p_value_table(trail, target, groups, epsilon, config, direction):
    """
    Bootstraps the replicate deltas of every group and builds the p-value table.

    Returns the table (without decisions), the target echo, and the flags.

    """

    context = _AuditContext(trail, target, groups, config, rescaled=False)
    active = context.active
    loss = trail.loss

    def block(weights, replicates):
        theta_star, fallbacks = context.resample(weights)
        replicate_stats = ReplicateStats(weights, loss, groups, theta_star)
        deltas = replicate_statistic('delta', replicate_stats, context.moments)[:, active]
        return np.column_stack((deltas, fallbacks))

    output = bootstrap_statistics(block, trail.n, config, label='flag')
    deltas = output[:, :-1]
    fallbacks = int(output[:, -1].sum())
    missing = np.isnan(deltas)

    table = context.base_table().drop(columns='s_hat')
    s_star = np.atleast_1d(mad_scale(deltas))
    p_values, details = mad_p_values(table['eps_hat'].to_numpy(), s_star, epsilon, direction)
    table['s_star'] = s_star
    for key in ('p_greater', 'p_less'):
        if direction == 'two_sided' and key in details:
            table[key] = details[key]
    table['p_value'] = p_values
    table['missing_replicates'] = missing.sum(axis=0)
    table['degenerate'] = details['degenerate']

    flags = dict(context.flags)
    flags['replicates_with_missing_groups'] = int(missing.any(axis=1).sum())
    if fallbacks:
        flags['reference_fallbacks'] = fallbacks
    if details['degenerate'].any():
        flags['degenerate_scale'] = table.loc[details['degenerate'], 'name'].tolist()
        warnings.warn(
            f'The bootstrap distribution was constant for {int(details["degenerate"].sum())} '
            'group(s); their p-values were set to 0 or 1.', stacklevel=3
        )
    if context.excluded:
        flags['excluded_groups'] = context.excluded

    return table, context.target_echo(), flags


def _fdr_mode(target, groups, trail, direction):
    """'controlled' when FDR control is established for the setting, else 'heuristic FDR'."""
    binary_loss = bool(np.isin(trail.loss, (0, 1)).all())
    if target.is_fixed and direction != 'two_sided' and (groups.disjoint or binary_loss):
        return 'controlled'
    return 'heuristic FDR'


def flag_p_values(trail, target, groups, epsilon, config, direction='greater'):
    """
    Bootstrap MAD p-values for every group and their Benjamini-Hochberg flags.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    groups : GroupCollection
        The groups to test.
    epsilon : float
        The tolerance.
    config : BootstrapConfig
        The resampling configuration; alpha is the FDR level.
    direction : {'greater', 'less', 'two_sided'}, optional
        The alternative being flagged. Default is 'greater'.

    Returns
    -------
    FlagReport
        The p-values and decisions.

    """

    table, target_echo, flags = _p_value_table(trail, target, groups, epsilon, config, direction)
    table['flagged'] = benjamini_hochberg(table['p_value'].to_numpy(), config.alpha)
    fdr_mode = _fdr_mode(target, groups, trail, direction)
    logger.info('flagged %d of %d groups (%s)', int(table['flagged'].sum()), len(table), fdr_mode)

    return FlagReport(
        table, alpha=config.alpha, epsilon=float(epsilon), direction=direction,
        fdr_mode=fdr_mode, config=config.to_dict(), target=target_echo, flags=flags
    )


def equalized_odds_flag(trail, groups, epsilon, config, outcome='y', direction='greater'):
    """
    Flags groups violating equalized odds by testing both outcome strata together.

    The loss must be L = 1{f(X) = 1}. Within each stratum Y = y, the target
    is the stratum mean (the false or true positive rate of the stratum), and
    the p-values of both strata are pooled into a single BH run. A group is
    flagged if either of its strata is rejected.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    groups : GroupCollection
        The groups over X.
    epsilon : float
        The tolerance.
    config : BootstrapConfig
        The resampling configuration.
    outcome : str, optional
        The binary outcome column. Default is 'y'.
    direction : {'greater', 'less', 'two_sided'}, optional
        Default is 'greater'.

    Returns
    -------
    FlagReport
        One row per (group, stratum), named 'G | y=0' and 'G | y=1', with
        the base group in the parent column; use
        :meth:`FlagReport.group_flags` for the per-group result. A group
        that is empty within a stratum is dropped from that stratum's test.

    """

    y = trail.binary_column(outcome)
    tables = []
    targets = {}
    flags = {}
    for stratum in (0, 1):
        mask = y == stratum
        if not mask.any():
            logger.warning('Outcome stratum %s=%d is empty and was skipped.', outcome, stratum)
            continue
        table, target_echo, stratum_flags = _p_value_table(
            trail.subset(mask), TargetSpec.pooled_mean(), groups.restrict(mask), epsilon,
            config, direction
        )
        table.insert(1, 'parent', table['name'])
        table['name'] = table['name'] + f' | {outcome}={stratum}'
        table['stratum'] = stratum
        tables.append(table)
        targets[f'{outcome}={stratum}'] = target_echo
        flags[f'{outcome}={stratum}'] = stratum_flags

    if not tables:
        raise AuditInputError(f'Both strata of "{outcome}" are empty.')
    table = pd.concat(tables, ignore_index=True)
    table['flagged'] = benjamini_hochberg(table['p_value'].to_numpy(), config.alpha)

    return FlagReport(
        table, alpha=config.alpha, epsilon=float(epsilon), direction=direction,
        fdr_mode='heuristic FDR', config=config.to_dict(), target=targets, flags=flags,
        recipe='equalized_odds'
    )


def multicalibration_flag(trail, base, prediction_bins, gamma, epsilon, config):
    """
    Flags groups violating gamma-multicalibration.

    The loss must be L = Y - f(X) with the target fixed at 0. Every cell
    G@v is tested two-sided at tolerance gamma + epsilon, all cells go through
    one BH run, and G is flagged if any of its cells is rejected.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    base : ExplicitGroups
        The base groups G.
    prediction_bins : str
        The categorical column holding the binned predictions.
    gamma : float
        The multicalibration tolerance.
    epsilon : float
        The additional testing tolerance.
    config : BootstrapConfig
        The resampling configuration.

    Returns
    -------
    FlagReport
        One row per non-empty cell, with the base group in the parent column.

    """

    expanded = multicalibration_expand(base, trail, prediction_bins)
    tolerance = float(gamma) + float(epsilon)
    table, target_echo, flags = _p_value_table(
        trail, TargetSpec.fixed(0.0), expanded, tolerance, config, 'two_sided'
    )
    table.insert(1, 'parent', [expanded.parents[i] for i in table['group_index']])
    table['flagged'] = benjamini_hochberg(table['p_value'].to_numpy(), config.alpha)
    if expanded.dropped:
        flags['empty_cells'] = list(expanded.dropped)

    return FlagReport(
        table, alpha=config.alpha, epsilon=tolerance, direction='two_sided',
        fdr_mode='heuristic FDR', config=config.to_dict(), target=target_echo, flags=flags,
        recipe='multicalibration'
    )


def flag_grid(report, groups):
    """
    A long table of decisions for groups built from categorical intersections.

    Parameters
    ----------
    report : FlagReport
        A standard or multicalibration report over `groups`.
    groups : ExplicitGroups
        The groups the report was run on; their descriptors give the levels.

    Returns
    -------
    pd.DataFrame
        One row per tested group with the name, one column per categorical
        column (empty where a marginal group leaves it unrestricted),
        eps_hat, p_value, and flagged.

    """

    if 'group_index' not in report.table or 'stratum' in report.table:
        raise AuditInputError('A flag grid needs a standard or multicalibration report.')
    descriptors = getattr(groups, 'descriptors', None)
    table = report.table
    rows = []
    for index, name in zip(table['group_index'], table['name']):
        row = {'name': name}
        if descriptors is not None and descriptors[index]:
            row.update(descriptors[index])
        rows.append(row)
    frame = pd.DataFrame(rows).fillna('')
    for column in ('eps_hat', 'p_value', 'flagged'):
        frame[column] = table[column].to_numpy()
    return frame
