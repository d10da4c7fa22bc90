# -*- coding: utf-8 -*-
"""The fairaudit command-line interface.

Subcommands mirror the procedures of :class:`fairaudit.file_io.RunConfig`:

    fairaudit bounds --side lower ...
    fairaudit certify --epsilon 0.5 --direction below ...
    fairaudit flag --epsilon 0.05 ...
    fairaudit rkhs bound|query ...
    fairaudit validate fwer --fast ...

Any option may instead be given in a JSON file passed with --config; options
on the command line take precedence.

"""

import argparse
import logging
import sys

from . import __version__
from .file_io import EXIT_CODES, RunConfig, run
from .utils import AuditInputError


logger = logging.getLogger(__name__)


def _float_list(text):
    try:
        return [float(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Expected comma-separated numbers, not "{text}".')


def _int_list(text):
    try:
        return [int(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'Expected comma-separated integers, not "{text}".')


def _role(text):
    column, separator, role = text.rpartition('=')
    if not separator or not column:
        raise argparse.ArgumentTypeError(f'Roles are given as column=role, not "{text}".')
    return column, role


def _add_common(parser):
    """Options shared by every subcommand."""
    parser.add_argument('--config', help='JSON configuration file')
    parser.add_argument('--output', help='report file (JSON); tables are written next to it')
    parser.add_argument('--alpha', type=float)
    parser.add_argument('-B', '--replicates', dest='B', type=int, help='bootstrap replicates')
    parser.add_argument('--seed', type=int)
    parser.add_argument(
        '--workers', type=int, help='worker threads (default: FAIRAUDIT_WORKERS or 1)'
    )
    parser.add_argument('-v', '--verbose', action='count', default=0)


def _add_data(parser):
    """Options describing the audit trail and the target."""
    parser.add_argument('--input', help='CSV file holding the audit trail')
    parser.add_argument(
        '--role', dest='roles', action='append', type=_role, metavar='COLUMN=ROLE',
        help='column role; repeat for each used column'
    )
    parser.add_argument(
        '--target', choices=('fixed', 'pooled_mean', 'reference_mean', 'custom'),
        help='target kind'
    )
    parser.add_argument('--theta', type=float, help='target value for fixed or custom targets')
    parser.add_argument('--p-star', dest='p_star', type=float)
    parser.add_argument('--w0', help='shrinkage weight, a positive number or "inf"')


def _add_groups(parser):
    """Options describing the groups."""
    parser.add_argument('--groups', dest='group_kind', choices=('categorical', 'labels', 'interval'))
    parser.add_argument(
        '--columns', type=lambda text: [value for value in text.split(',') if value],
        help='comma-separated categorical columns to cross'
    )
    parser.add_argument('--include-marginals', action='store_true', default=None)
    parser.add_argument('--column', help='group-label column')
    parser.add_argument('--covariate', help='numeric covariate of an interval grid')
    parser.add_argument('--endpoints', type=_float_list, help='comma-separated endpoint grid')
    parser.add_argument('--num-endpoints', dest='num_endpoints', type=int)
    parser.add_argument('--rescaled', action='store_true', default=None)
    parser.add_argument('--recipe', choices=('standard', 'multicalibration', 'equalized_odds'))
    parser.add_argument('--prediction-bins', dest='prediction_bins')
    parser.add_argument('--outcome')
    parser.add_argument(
        '--export', dest='exports', action='append', choices=('curve', 'grid'),
        help='extra table to write'
    )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog='fairaudit', description='Simultaneous statistical auditing of model performance across groups.'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    bounds = subparsers.add_parser('bounds', help='simultaneous confidence bounds')
    bounds.add_argument('--side', choices=('lower', 'upper', 'two-sided'), default='lower')
    certify = subparsers.add_parser('certify', help='Boolean certificates with FWER control')
    certify.add_argument('--epsilon', type=float)
    certify.add_argument('--direction', choices=('above', 'below', 'bioequivalence'))
    certify.add_argument('--no-fast-path', dest='fast_path', action='store_false', default=None)
    flag = subparsers.add_parser('flag', help='flag groups with FDR control')
    flag.add_argument('--epsilon', type=float)
    flag.add_argument('--direction', choices=('greater', 'less', 'two_sided'))
    flag.add_argument('--gamma', type=float, help='multicalibration tolerance')
    for subparser in (bounds, certify, flag):
        _add_common(subparser)
        _add_data(subparser)
        _add_groups(subparser)

    rkhs = subparsers.add_parser('rkhs', help='audit over RKHS distribution shifts')
    rkhs.add_argument('action', choices=('bound', 'query'))
    rkhs.add_argument('--kernel', dest='family', choices=('gaussian', 'laplace'))
    rkhs.add_argument('--bandwidth', type=float)
    rkhs.add_argument(
        '--kernel-columns', dest='kernel_columns',
        type=lambda text: [value for value in text.split(',') if value]
    )
    rkhs.add_argument('--estimated-theta', dest='estimated_theta', action='store_true', default=None)
    rkhs.add_argument('--theta-correction', dest='theta_correction', choices=('rank_one', 'identity'))
    rkhs.add_argument('--queries', help='CSV file of shift queries')
    rkhs.add_argument('--cache', help='JSON file storing the critical value')
    _add_common(rkhs)
    _add_data(rkhs)

    validate = subparsers.add_parser('validate', help='Monte Carlo validation experiments')
    validate.add_argument('experiment', choices=('fwer', 'coverage', 'fdr', 'rkhs_percentile'))
    validate.add_argument('--fast', action='store_true', default=None)
    validate.add_argument('--trials', type=int)
    validate.add_argument('--n-grid', dest='n_grid', type=_int_list)
    validate.add_argument('--model', choices=('homoskedastic', 'heteroskedastic'))
    validate.add_argument('--epsilon', type=float)
    validate.add_argument('--epsilons', type=_float_list)
    validate.add_argument('--rescaled', action='store_true', default=None)
    validate.add_argument('--direction', choices=('below', 'above'))
    validate.add_argument('--side', choices=('upper', 'lower'))
    validate.add_argument('--bandwidths', type=_float_list)
    validate.add_argument('--n-nonnull', dest='n_nonnull', type=int)
    _add_common(validate)

    return parser


def _drop_none(values):
    return {key: value for key, value in values.items() if value is not None}


def _overrides(args):
    """Converts parsed arguments to RunConfig fields; unset options are left out."""
    options = vars(args)
    command = options['command']
    overrides = {
        key: options.get(key) for key in (
            'output', 'alpha', 'B', 'seed', 'workers', 'input', 'p_star', 'w0', 'rescaled',
            'recipe', 'prediction_bins', 'outcome', 'epsilon', 'gamma', 'fast_path',
            'estimated_theta', 'theta_correction', 'queries', 'cache'
        )
    }
    if options.get('exports'):
        overrides['exports'] = options['exports']
    if options.get('roles'):
        overrides['roles'] = dict(options['roles'])
    overrides['target'] = _drop_none({'kind': options.get('target'), 'theta': options.get('theta')})
    overrides['groups'] = _drop_none({
        'kind': options.get('group_kind'), 'columns': options.get('columns'),
        'include_marginals': options.get('include_marginals'), 'column': options.get('column'),
        'covariate': options.get('covariate'), 'endpoints': options.get('endpoints'),
        'num_endpoints': options.get('num_endpoints')
    })
    overrides['kernel'] = _drop_none({
        'family': options.get('family'), 'bandwidth': options.get('bandwidth'),
        'columns': options.get('kernel_columns')
    })

    if command == 'bounds':
        overrides['procedure'] = f'bounds-{options["side"]}'
    elif command == 'rkhs':
        overrides['procedure'] = f'rkhs-{options["action"]}'
    elif command == 'validate':
        overrides['procedure'] = 'validate'
        overrides['fast'] = options.get('fast')
        overrides['epsilon'] = None
        overrides['rescaled'] = None
        overrides['experiment'] = _drop_none({
            'name': options['experiment'], 'trials': options.get('trials'),
            'n_grid': options.get('n_grid'), 'model': options.get('model'),
            'epsilon': options.get('epsilon'), 'epsilons': options.get('epsilons'),
            'rescaled': options.get('rescaled'), 'direction': options.get('direction'),
            'side': options.get('side'), 'bandwidths': options.get('bandwidths'),
            'n_nonnull': options.get('n_nonnull'), 'p_star': options.get('p_star'),
            'w0': options.get('w0')
        })
    else:
        overrides['procedure'] = command
        overrides['direction'] = options.get('direction')

    return {key: value for key, value in overrides.items() if value not in (None, {})}


def main(argv=None):
    """
    Runs the command line interface.

    Parameters
    ----------
    argv : Sequence(str), optional
        The arguments; if None (default), sys.argv[1:].

    Returns
    -------
    int
        The exit code: 0 on success, 2 for invalid input or configuration,
        3 for numerically degenerate data, and 1 otherwise.

    """

    args = _build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    logging.captureWarnings(True)

    overrides = _overrides(args)
    try:
        if args.config is not None:
            config = RunConfig.from_file(args.config, overrides)
        else:
            config = RunConfig.from_dict(overrides)
    except (AuditInputError, FileNotFoundError) as error:
        logger.error('Invalid configuration: %s', error)
        return EXIT_CODES['input']

    return run(config)


if __name__ == '__main__':
    sys.exit(main())
