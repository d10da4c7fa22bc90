# -*- coding: utf-8 -*-
"""Reading audit trails from CSV files, running configured audits, and writing reports.

A CSV file is ingested by giving each used column a role. Files written by
:func:`serialize_trail` begin with a comment line holding the roles, so
they can be read back without specifying them again.

Reports are JSON files written with sorted keys; NaN is written as null and
infinities as the strings 'inf' and '-inf', so identical inputs always give
byte-identical files.

Attributes
----------
ROLES : tuple(str)
    The canonical column roles.
PROCEDURES : tuple(str)
    The procedures that :func:`run` can execute.
EXIT_CODES : dict(str, int)
    The exit code for each kind of outcome.

"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError

from . import __version__
from .audit_trail import AuditTrail, TargetSpec
from .bootstrap import BootstrapConfig
from .certify import (
    boolean_certify, equalized_odds_bounds, lower_bounds, multicalibration_gamma_bounds,
    two_sided_bounds, upper_bounds, width_curve
)
from .flagging import equalized_odds_flag, flag_grid, flag_p_values, multicalibration_flag
from .groups import ExplicitGroups, IntervalGroups, interval_grid, intersect_categorical
from .rkhs import KernelSpec, RKHSCriticalValue, ShiftQuery, rkhs_critical_value, shift_report
from .utils import (
    AuditError, AuditInputError, DegenerateDataError, format_rows, parse_weight, series_to_numpy
)
from .validation import ExperimentSpec, run_experiment


logger = logging.getLogger(__name__)

__all__ = [
    'ROLES', 'PROCEDURES', 'EXIT_CODES', 'ingest_csv', 'serialize_trail', 'to_jsonable',
    'write_report', 'write_table', 'save_critical_value', 'load_critical_value',
    'read_shift_queries', 'build_target', 'build_groups', 'RunConfig', 'execute', 'run'
]

ROLES = (
    'loss', 'covariate:numeric', 'covariate:categorical', 'reference-indicator', 'custom-psi',
    'group-label', 'record-id'
)
_ROLE_ALIASES = {
    'numeric': 'covariate:numeric', 'categorical': 'covariate:categorical',
    'reference': 'reference-indicator', 'psi': 'custom-psi', 'group': 'group-label',
    'id': 'record-id'
}
PROCEDURES = (
    'bounds-lower', 'bounds-upper', 'bounds-two-sided', 'certify', 'flag', 'rkhs-bound',
    'rkhs-query', 'validate'
)
EXIT_CODES = {'success': 0, 'error': 1, 'input': 2, 'numerical': 3}
_ROLE_HEADER = '# fairaudit roles: '


def _canonical_role(column, role):
    role = _ROLE_ALIASES.get(role, role)
    if role not in ROLES:
        raise AuditInputError(f'Column "{column}" has the unknown role "{role}".')
    return role


def _encoding_error(path, error):
    """Builds the AuditInputError for a file that is not valid UTF-8."""
    # the decoder offset is relative to its chunk, so locate the byte in the whole file
    raw = Path(path).read_bytes()
    try:
        raw.decode('utf-8')
    except UnicodeDecodeError as full_error:
        error = full_error
    line = raw.count(b'\n', 0, error.start) + 1
    return AuditInputError(
        f'{Path(path).name} is not valid UTF-8: byte {error.object[error.start:error.start + 1]!r} '
        f'at position {error.start} (line {line}).'
    )


def _read_role_header(path):
    """Returns the roles stored in a serialized trail's first line, or None."""
    try:
        with Path(path).open('r', encoding='utf-8') as fp:
            first_line = fp.readline()
    except UnicodeDecodeError as error:
        raise _encoding_error(path, error) from None
    if first_line.startswith(_ROLE_HEADER):
        return json.loads(first_line[len(_ROLE_HEADER):])
    return None


def _numeric_values(frame, column):
    """Converts a column to floats, rejecting missing and non-numeric entries."""
    values, bad_rows = series_to_numpy(frame[column])
    if bad_rows.size:
        raise AuditInputError(
            f'Column "{column}" has missing or non-numeric values at data rows '
            f'{format_rows(bad_rows + 1)}.'
        )
    return values


def ingest_csv(path, roles=None, return_auxiliary=False):
    """
    Reads an audit trail from a CSV file with a header row.

    Parameters
    ----------
    path : str or Path
        The CSV file.
    roles : dict(str, str), optional
        Maps column names to roles: 'loss' (exactly one), 'covariate:numeric',
        'covariate:categorical', 'reference-indicator', 'custom-psi',
        'group-label', or 'record-id'. The short forms 'numeric',
        'categorical', 'reference', 'psi', 'group', and 'id' are also
        accepted. Columns without a role are ignored. If None (default),
        the roles are read from the file's role header.
    return_auxiliary : bool, optional
        If True, also returns the reference and psi columns. Default is False.

    Returns
    -------
    trail : AuditTrail
        The audit trail. Group-label columns become categorical covariates.
    auxiliary : dict
        Only if return_auxiliary is True; may hold 'reference' (bool array)
        and 'psi' (float array).

    Raises
    ------
    AuditInputError
        Raised if the roles are invalid or missing, a declared column is
        absent, or any used value is missing or non-numeric where a number
        is required, or if the file is not valid UTF-8. Row numbers in
        messages count data rows from 1.

    """

    path = Path(path)
    stored_roles = _read_role_header(path)
    if roles is None:
        if stored_roles is None:
            raise AuditInputError(f'No column roles were given and {path.name} has no role header.')
        roles = stored_roles
    roles = {column: _canonical_role(column, role) for column, role in roles.items()}
    loss_columns = [column for column, role in roles.items() if role == 'loss']
    if len(loss_columns) != 1:
        raise AuditInputError(f'Exactly one loss column is required, but got {loss_columns}.')
    for role in ('reference-indicator', 'custom-psi', 'record-id'):
        if sum(value == role for value in roles.values()) > 1:
            raise AuditInputError(f'At most one column may have the role "{role}".')

    text_columns = [
        column for column, role in roles.items()
        if role in ('covariate:categorical', 'group-label', 'record-id')
    ]
    try:
        frame = pd.read_csv(
            path, skiprows=1 if stored_roles is not None else 0, encoding='utf-8',
            dtype={column: str for column in text_columns}, keep_default_na=False,
            na_values=[''], float_precision='round_trip'
        )
    except UnicodeDecodeError as error:
        raise _encoding_error(path, error) from None
    missing = [column for column in roles if column not in frame.columns]
    if missing:
        raise AuditInputError(f'Declared columns {missing} are not in {path.name}.')
    logger.info('Read %d rows from %s', len(frame), path.name)

    numeric = {}
    categorical = {}
    record_ids = None
    auxiliary = {}
    for column, role in roles.items():
        if role in ('covariate:categorical', 'group-label', 'record-id'):
            if frame[column].isna().any():
                raise AuditInputError(
                    f'Column "{column}" has missing values at data rows '
                    f'{format_rows(np.flatnonzero(frame[column].isna().to_numpy()) + 1)}.'
                )
            if role == 'record-id':
                record_ids = frame[column].to_numpy(dtype=object)
            else:
                categorical[column] = frame[column].to_numpy(dtype=object)
        elif role == 'covariate:numeric':
            numeric[column] = _numeric_values(frame, column)
        elif role == 'reference-indicator':
            values = _numeric_values(frame, column)
            if not np.isin(values, (0, 1)).all():
                raise AuditInputError(f'Reference column "{column}" must hold only 0 and 1.')
            auxiliary['reference'] = values.astype(bool)
        elif role == 'custom-psi':
            auxiliary['psi'] = _numeric_values(frame, column)

    loss_name = loss_columns[0]
    trail = AuditTrail(
        _numeric_values(frame, loss_name), numeric=numeric, categorical=categorical,
        record_ids=record_ids, loss_name=loss_name
    )
    if return_auxiliary:
        return trail, auxiliary
    return trail


def serialize_trail(trail, path):
    """
    Writes an audit trail to a CSV file preceded by a role header.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    path : str or Path
        The output file.

    Notes
    -----
    ``ingest_csv(path)`` recreates a trail equal to the input.

    """

    frame = trail.to_frame()
    roles = {}
    if trail.record_ids is not None:
        roles['record_id'] = 'record-id'
    roles[trail.loss_name] = 'loss'
    roles.update({name: 'covariate:numeric' for name in trail.numeric_columns})
    roles.update({name: 'covariate:categorical' for name in trail.categorical_columns})

    path = Path(path)
    with path.open('w', encoding='utf-8', newline='') as fp:
        fp.write(_ROLE_HEADER + json.dumps(roles) + '\n')
        frame.to_csv(fp, index=False)


def to_jsonable(value):
    """
    Recursively converts numpy and pandas values to plain JSON types.

    NaN becomes None and infinities become the strings 'inf' and '-inf'.

    """

    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    elif isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    elif isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    elif isinstance(value, (bool, np.bool_)):
        return bool(value)
    elif isinstance(value, (int, np.integer)):
        return int(value)
    elif isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return None
        elif np.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    elif value is None or isinstance(value, str):
        return value
    elif isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict(orient='records'))
    return str(value)


def write_report(report, path):
    """
    Writes a report dictionary as sorted, indented JSON.

    Parameters
    ----------
    report : dict
        The report, as returned by a report's ``to_dict`` method.
    path : str or Path
        The output file.

    """

    with Path(path).open('w', encoding='utf-8') as fp:
        json.dump(to_jsonable(report), fp, indent=2, sort_keys=True, allow_nan=False)
        fp.write('\n')


def write_table(table, path):
    """Writes a result table to CSV without the index."""
    table.to_csv(path, index=False)


def save_critical_value(critical_value, path):
    """Caches an RKHS critical value as JSON for later shift queries."""
    write_report(critical_value.to_dict(), path)


def load_critical_value(path):
    """
    Loads an RKHS critical value written by :func:`save_critical_value`.

    Raises
    ------
    AuditInputError
        Raised if the file is not a cached critical value.

    """

    with Path(path).open('r', encoding='utf-8') as fp:
        values = json.load(fp)
    if values.get('procedure') != 'rkhs-bound':
        raise AuditInputError(f'{Path(path).name} does not hold a cached critical value.')
    return RKHSCriticalValue.from_dict(values)


def read_shift_queries(path, kernel):
    """
    Reads shift queries from a CSV file.

    Two layouts are accepted, both with a 'query' column naming the shift
    each row belongs to:

    * expansions: a 'coefficient' column plus one column per kernel
      covariate giving the anchor point;
    * point values: a 'value' column with h at each audit record, in record
      order, and a 'norm_bound' column holding the declared norm bound.

    Parameters
    ----------
    path : str or Path
        The CSV file.
    kernel : KernelSpec
        The kernel of the expansions; its columns name the anchor columns.

    Returns
    -------
    list(ShiftQuery)
        The queries in order of first appearance.

    Raises
    ------
    AuditInputError
        Raised if the layout is not recognized or any query is invalid.

    """

    frame = pd.read_csv(path, dtype={'query': str}, float_precision='round_trip')
    if 'query' not in frame:
        raise AuditInputError('A shift query file needs a "query" column.')

    queries = []
    if 'coefficient' in frame:
        columns = kernel.columns
        if not columns:
            raise AuditInputError('Expansion queries need the kernel columns to be named.')
        absent = [column for column in columns if column not in frame]
        if absent:
            raise AuditInputError(f'Anchor columns {absent} are missing from the query file.')
        for name, rows in frame.groupby('query', sort=False):
            anchors = np.column_stack([_numeric_values(rows, column) for column in columns])
            queries.append(ShiftQuery.from_expansion(
                anchors, _numeric_values(rows, 'coefficient'), kernel, name=name
            ))
    elif 'value' in frame and 'norm_bound' in frame:
        for name, rows in frame.groupby('query', sort=False):
            queries.append(ShiftQuery.from_values(
                _numeric_values(rows, 'value'), _numeric_values(rows, 'norm_bound').max(),
                name=name
            ))
    else:
        raise AuditInputError(
            'A shift query file needs either a "coefficient" column or "value" and '
            '"norm_bound" columns.'
        )
    logger.info('Read %d shift queries', len(queries))
    return queries


def build_target(values, auxiliary=None):
    """
    Creates a TargetSpec from its configuration.

    Parameters
    ----------
    values : dict
        'kind' is 'fixed' (with 'theta'), 'pooled_mean', 'reference_mean', or
        'custom' (with 'theta'); the last two use the reference-indicator
        and custom-psi columns of the input file.
    auxiliary : dict, optional
        The extra columns returned by :func:`ingest_csv`.

    Returns
    -------
    TargetSpec
        The target.

    """

    auxiliary = auxiliary or {}
    kind = values.get('kind', 'fixed')
    if kind == 'fixed':
        return TargetSpec.fixed(values.get('theta', 0.0))
    elif kind == 'pooled_mean':
        return TargetSpec.pooled_mean()
    elif kind == 'reference_mean':
        if 'reference' not in auxiliary:
            raise AuditInputError('A reference_mean target needs a reference-indicator column.')
        return TargetSpec.reference_mean(auxiliary['reference'])
    elif kind == 'custom':
        if 'psi' not in auxiliary:
            raise AuditInputError('A custom target needs a custom-psi column.')
        return TargetSpec.custom(values.get('theta'), auxiliary['psi'])
    raise AuditInputError(f'Unknown target kind "{kind}".')


def build_groups(trail, values):
    """
    Creates the group collection described by a configuration.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    values : dict
        'kind' is one of:

        * 'categorical': crosses 'columns'; 'include_marginals' adds the
          lower-order cells.
        * 'labels': one group per level of 'column'.
        * 'interval': all sub-intervals of 'endpoints' on 'covariate'; or
          'num_endpoints' evenly spaced endpoints spanning 'start' and
          'stop' (by default the covariate's range).

    Returns
    -------
    GroupCollection
        The groups.

    """

    kind = values.get('kind')
    if kind == 'categorical':
        return intersect_categorical(
            trail, values['columns'], values.get('include_marginals', False)
        )
    elif kind == 'labels':
        column = values['column']
        return ExplicitGroups.from_labels(
            trail.labels(column), levels=trail.levels[column], prefix=f'{column}='
        )
    elif kind == 'interval':
        covariate = values['covariate']
        endpoints = values.get('endpoints')
        if endpoints is None:
            data = trail.column(covariate)
            endpoints = np.linspace(
                values.get('start', data.min()), values.get('stop', data.max()),
                int(values.get('num_endpoints', 11))
            )
        return interval_grid(trail, covariate, endpoints)
    raise AuditInputError(f'Group kind must be "categorical", "labels", or "interval", not {kind!r}.')


class RunConfig:
    """
    Everything needed to run one audit from the command line or a config file.

    Parameters
    ----------
    procedure : str
        One of PROCEDURES.
    input : str, optional
        The CSV file holding the audit trail; required except for 'validate'.
    roles : dict(str, str), optional
        The column roles; if None, read from the file's role header.
    target : dict, optional
        The target description, see :func:`build_target`. Default is the
        fixed target 0.
    groups : dict, optional
        The group description, see :func:`build_groups`.
    recipe : {'standard', 'multicalibration', 'equalized_odds'}, optional
        The audit recipe for 'bounds-two-sided' and 'flag'. Default is 'standard'.
    prediction_bins : str, optional
        The categorical column of binned predictions for 'multicalibration'.
    gamma : float, optional
        The multicalibration tolerance used when flagging. Default is 0.
    outcome : str, optional
        The binary outcome column for 'equalized_odds'. Default is 'y'.
    alpha : float, optional
        The error level. Default is 0.1.
    epsilon : float, optional
        The tolerance for 'certify' and 'flag'. Default is 0.
    direction : str, optional
        'above', 'below', or 'bioequivalence' for 'certify'; 'greater',
        'less', or 'two_sided' for 'flag'. Defaults are 'above' and 'greater'.
    B, seed, p_star, w0, workers
        The bootstrap settings, see :class:`.BootstrapConfig`.
    rescaled : bool, optional
        Whether to use the rescaled process. Default is False.
    fast_path : bool, optional
        Whether to use the interval fast path when certifying. Default is True.
    kernel : dict, optional
        The kernel description, see :class:`.KernelSpec`.
    estimated_theta : bool, optional
        Forwarded to :func:`.rkhs_critical_value`.
    theta_correction : str, optional
        Forwarded to :func:`.rkhs_critical_value`. Default is 'rank_one'.
    queries : str, optional
        A CSV file of shift queries for 'rkhs-bound' and 'rkhs-query'.
    cache : str, optional
        The JSON file where 'rkhs-bound' stores, and 'rkhs-query' reads, t*.
    experiment : dict, optional
        The settings of 'validate', see :class:`.ExperimentSpec`; 'name'
        selects the experiment.
    fast : bool, optional
        Fast mode for 'validate'. Default is False.
    output : str, optional
        The report file. Tables are written next to it with the suffixes
        '_groups.csv', '_curve.csv', '_grid.csv', '_summary.csv', or
        '_results.csv'. If None, nothing is written.
    exports : Sequence(str), optional
        Extra tables to write: 'curve' for interval grids, 'grid' for
        categorical flag runs.

    """

    def __init__(self, procedure, *, input=None, roles=None, target=None, groups=None,
                 recipe='standard', prediction_bins=None, gamma=0.0, outcome='y', alpha=0.1,
                 epsilon=0.0, direction=None, B=500, seed=0, p_star=0.01, w0=np.inf,
                 workers=None, rescaled=False, fast_path=True, kernel=None,
                 estimated_theta=None, theta_correction='rank_one', queries=None, cache=None,
                 experiment=None, fast=False, output=None, exports=()):
        """
        Raises
        ------
        AuditInputError
            Raised if the procedure is unknown or a field it needs is missing.

        """

        if procedure not in PROCEDURES:
            raise AuditInputError(f'procedure must be one of {PROCEDURES}, not "{procedure}".')
        if procedure != 'validate' and input is None:
            raise AuditInputError(f'The "{procedure}" procedure needs an input file.')
        if procedure in ('bounds-lower', 'bounds-upper', 'bounds-two-sided', 'certify', 'flag'):
            if groups is None:
                raise AuditInputError(f'The "{procedure}" procedure needs a group description.')
        if procedure == 'rkhs-query' and (cache is None or queries is None):
            raise AuditInputError('The "rkhs-query" procedure needs a cache file and a query file.')
        if recipe not in ('standard', 'multicalibration', 'equalized_odds'):
            raise AuditInputError(f'Unknown recipe "{recipe}".')
        if recipe == 'multicalibration' and prediction_bins is None:
            raise AuditInputError('The multicalibration recipe needs the prediction_bins column.')
        if procedure == 'validate' and not (experiment or {}).get('name'):
            raise AuditInputError('The "validate" procedure needs experiment.name.')

        self.procedure = procedure
        self.input = input
        self.roles = roles
        self.target = target or {'kind': 'fixed', 'theta': 0.0}
        self.groups = groups
        self.recipe = recipe
        self.prediction_bins = prediction_bins
        self.gamma = float(gamma)
        self.outcome = outcome
        self.epsilon = float(epsilon)
        if direction is None:
            direction = 'greater' if procedure == 'flag' else 'above'
        self.direction = direction
        self.rescaled = bool(rescaled)
        self.fast_path = bool(fast_path)
        self.kernel = kernel or {}
        self.estimated_theta = estimated_theta
        self.theta_correction = theta_correction
        self.queries = queries
        self.cache = cache
        self.experiment = dict(experiment or {})
        self.fast = bool(fast)
        self.output = output
        self.exports = tuple(exports)
        self.bootstrap = BootstrapConfig(
            B=B, seed=seed, alpha=alpha, p_star=p_star, w0=parse_weight(w0), workers=workers
        )


    def __str__(self):
        return f'{self.__class__.__name__}(procedure={self.procedure}, input={self.input})'


    @classmethod
    def from_dict(cls, values):
        """
        Creates a RunConfig from a dictionary, ignoring entries set to None.

        Raises
        ------
        AuditInputError
            Raised if 'procedure' is missing or an unknown field is given.

        """

        values = {key: value for key, value in values.items() if value is not None}
        if 'procedure' not in values:
            raise AuditInputError('The configuration needs a procedure.')
        procedure = values.pop('procedure')
        try:
            return cls(procedure, **values)
        except TypeError as error:
            raise AuditInputError(f'Invalid configuration field: {error}')


    @classmethod
    def from_file(cls, path, overrides=None):
        """
        Reads a JSON configuration file and applies overrides on top of it.

        Parameters
        ----------
        path : str or Path
            The JSON file.
        overrides : dict, optional
            Values that replace the file's; entries set to None are ignored, and
            dictionaries are merged into the file's sections.

        """

        with Path(path).open('r', encoding='utf-8') as fp:
            try:
                values = json.load(fp)
            except json.JSONDecodeError as error:
                raise AuditInputError(f'{Path(path).name} is not valid JSON: {error}')
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            # nested sections are merged key by key
            if isinstance(value, dict) and isinstance(values.get(key), dict):
                values[key] = {**values[key], **value}
            else:
                values[key] = value
        return cls.from_dict(values)


    def to_dict(self):
        """The configuration echo written into reports; workers are left out."""
        return {
            'procedure': self.procedure, 'input': None if self.input is None else Path(self.input).name,
            'roles': self.roles, 'target': self.target, 'groups': self.groups,
            'recipe': self.recipe, 'prediction_bins': self.prediction_bins, 'gamma': self.gamma,
            'outcome': self.outcome, 'epsilon': self.epsilon, 'direction': self.direction,
            'rescaled': self.rescaled, 'kernel': self.kernel,
            'estimated_theta': self.estimated_theta, 'theta_correction': self.theta_correction,
            'experiment': self.experiment, 'fast': self.fast,
            'bootstrap': self.bootstrap.to_dict()
        }


def _output_path(config, suffix):
    path = Path(config.output)
    return path.with_name(f'{path.stem}{suffix}')


def _run_bounds(config, trail, target, groups):
    side = config.procedure.split('-', 1)[1].replace('-', '_')
    tables = {}
    if config.recipe == 'multicalibration':
        report, summary = multicalibration_gamma_bounds(
            trail, groups, config.prediction_bins, config.bootstrap, config.rescaled
        )
        output = report.to_dict()
        output['recipe'] = 'multicalibration'
        output['summary'] = summary
        tables['summary'] = summary
    elif config.recipe == 'equalized_odds':
        reports, summary = equalized_odds_bounds(
            trail, groups, config.bootstrap, config.outcome, config.rescaled
        )
        output = {
            'procedure': 'bounds-two-sided', 'recipe': 'equalized_odds',
            'strata': {f'{config.outcome}={key}': value.to_dict() for key, value in reports.items()},
            'summary': summary
        }
        tables['summary'] = summary
        report = None
    else:
        functions = {
            'lower': lower_bounds, 'upper': upper_bounds, 'two_sided': two_sided_bounds
        }
        report = functions[side](trail, target, groups, config.bootstrap, config.rescaled)
        output = report.to_dict()
        output['recipe'] = 'standard'

    if report is not None:
        tables['groups'] = report.to_frame()
        if 'curve' in config.exports and isinstance(groups, IntervalGroups):
            tables['curve'] = width_curve(report, groups)
    return output, tables


def _run_certify(config, trail, target, groups):
    report = boolean_certify(
        trail, target, groups, config.epsilon, config.bootstrap, config.direction,
        config.rescaled, config.fast_path
    )
    tables = {'groups': report.to_frame()}
    if 'curve' in config.exports and isinstance(groups, IntervalGroups):
        tables['curve'] = width_curve(report, groups)
    return report.to_dict(), tables


def _run_flag(config, trail, target, groups):
    if config.recipe == 'multicalibration':
        report = multicalibration_flag(
            trail, groups, config.prediction_bins, config.gamma, config.epsilon, config.bootstrap
        )
    elif config.recipe == 'equalized_odds':
        report = equalized_odds_flag(
            trail, groups, config.epsilon, config.bootstrap, config.outcome, config.direction
        )
    else:
        report = flag_p_values(
            trail, target, groups, config.epsilon, config.bootstrap, config.direction
        )
    output = report.to_dict()
    tables = {'groups': report.to_frame()}
    if config.recipe != 'standard':
        summary = report.group_flags()
        output['summary'] = summary
        tables['summary'] = summary
    if 'grid' in config.exports and config.recipe != 'equalized_odds':
        tables['grid'] = flag_grid(report, groups)
    return output, tables


def _run_rkhs(config, trail, target):
    kernel = KernelSpec.from_dict(config.kernel)
    if config.procedure == 'rkhs-bound':
        critical_value = rkhs_critical_value(
            trail, target, kernel, config.bootstrap, config.estimated_theta,
            config.theta_correction
        )
        if config.cache is not None:
            save_critical_value(critical_value, config.cache)
    else:
        critical_value = load_critical_value(config.cache)
        kernel = KernelSpec.from_dict(critical_value.kernel)

    output = critical_value.to_dict()
    output['procedure'] = config.procedure
    tables = {}
    if config.queries is not None:
        table = shift_report(
            trail, target, read_shift_queries(config.queries, kernel), critical_value
        )
        output['queries'] = table
        tables['groups'] = table
    return output, tables


def execute(config):
    """
    Runs the configured procedure and writes its report and tables.

    Parameters
    ----------
    config : RunConfig
        The run configuration.

    Returns
    -------
    report : dict
        The report, including the configuration echo.
    tables : dict(str, pd.DataFrame)
        The result tables, keyed by their file suffix.

    Raises
    ------
    AuditError
        Raised by the underlying audit for invalid inputs or degenerate data.

    """

    if config.procedure == 'validate':
        options = dict(config.experiment)
        name = options.pop('name')
        options.setdefault('seed', config.bootstrap.seed)
        options.setdefault('B', config.bootstrap.B)
        options.setdefault('alpha', config.bootstrap.alpha)
        spec = ExperimentSpec(name, fast=config.fast, workers=config.bootstrap.workers, **options)
        results = run_experiment(spec)
        report = {'procedure': 'validate', 'experiment': spec.to_dict(), 'results': results}
        tables = {'results': results}
    else:
        trail, auxiliary = ingest_csv(config.input, config.roles, return_auxiliary=True)
        target = build_target(config.target, auxiliary)
        if config.procedure.startswith('rkhs'):
            report, tables = _run_rkhs(config, trail, target)
        else:
            groups = build_groups(trail, config.groups)
            runners = {'certify': _run_certify, 'flag': _run_flag}
            runner = runners.get(config.procedure, _run_bounds)
            report, tables = runner(config, trail, target, groups)
        report['input'] = {'file': Path(config.input).name, 'n': trail.n}

    report['run_config'] = config.to_dict()
    report['fairaudit_version'] = __version__

    if config.output is not None:
        write_report(report, config.output)
        for key, table in tables.items():
            write_table(table, _output_path(config, f'_{key}.csv'))
        logger.info('Wrote the report to %s', config.output)
    return report, tables


def run(config):
    """
    Runs the configured procedure, prints the main table, and returns an exit code.

    Parameters
    ----------
    config : RunConfig
        The run configuration.

    Returns
    -------
    int
        0 on success, 2 for invalid input or configuration, 3 for numerically
        degenerate data, and 1 for any other error.

    """

    try:
        _, tables = execute(config)
    except (DegenerateDataError, LinAlgError) as error:
        logger.error('Numerical error in %s: %s', config.procedure, error)
        return EXIT_CODES['numerical']
    except (AuditInputError, FileNotFoundError, KeyError) as error:
        logger.error('Invalid input for %s: %s', config.procedure, error)
        return EXIT_CODES['input']
    except AuditError as error:
        logger.error('%s failed: %s', config.procedure, error)
        return EXIT_CODES['error']
    except Exception:
        logger.exception('Unexpected error in %s', config.procedure)
        return EXIT_CODES['error']

    for key in ('results', 'summary', 'groups'):
        if key in tables:
            print(tables[key].to_string(index=False))
            break
    return EXIT_CODES['success']
