# -*- coding: utf-8 -*-
"""Deterministic multinomial bootstrap engine and the per-replicate statistics.

Every replicate b draws its weights from its own random stream keyed by
(seed, b), so the replicates can be computed in any order and by any
number of worker threads while giving bit-identical results.

Attributes
----------
QUANTILE_CONVENTION : str
    A description of the finite-sample quantile rule, written into every report.
CHUNK_SIZE : int
    The number of replicates evaluated together in one vectorized block. Blocks
    are fixed independently of the worker count.

"""

from concurrent.futures import ThreadPoolExecutor
import logging
import math

import numpy as np

from .utils import AuditInputError, get_worker_count, parse_weight, validate_level


logger = logging.getLogger(__name__)

__all__ = [
    'BootstrapConfig', 'ReplicateStats', 'quantile', 'resample_weights', 'weight_matrix',
    'replicate_statistic', 'bootstrap_statistics', 'QUANTILE_CONVENTION', 'STATISTIC_KINDS'
]

QUANTILE_CONVENTION = (
    'inf{x : alpha <= F_B(x)}, i.e. the ceil(alpha * B)-th smallest replicate, no interpolation'
)
CHUNK_SIZE = 50
STATISTIC_KINDS = ('lower', 'lower_rescaled', 'boolean', 'boolean_rescaled', 'delta')


class BootstrapConfig:
    """
    The resampling configuration shared by all bootstrap procedures.

    Parameters
    ----------
    B : int, optional
        The number of bootstrap replicates. Default is 500.
    seed : int, optional
        The non-negative master seed. Default is 0.
    alpha : float, optional
        The error level, in (0, 1). Default is 0.1.
    p_star : float, optional
        The small-group threshold used by the rescaled procedures. Default is 0.01.
    w0 : float or str, optional
        The shrinkage weight used by the rescaled procedures; positive or
        infinite. Default is infinity.
    workers : int, optional
        The number of worker threads. If None (default), read from the
        FAIRAUDIT_WORKERS environment variable, falling back to 1.

    """

    def __init__(self, *, B=500, seed=0, alpha=0.1, p_star=0.01, w0=np.inf, workers=None):
        """
        Raises
        ------
        AuditInputError
            Raised if any field is outside of its valid range.

        """

        if isinstance(B, bool) or int(B) != B or B < 1:
            raise AuditInputError(f'B must be an integer >= 1, not {B!r}.')
        if isinstance(seed, bool) or int(seed) != seed or seed < 0:
            raise AuditInputError(f'seed must be a non-negative integer, not {seed!r}.')
        if not p_star > 0:
            raise AuditInputError(f'p_star must be > 0, not {p_star!r}.')

        self.B = int(B)
        self.seed = int(seed)
        self.alpha = validate_level(alpha)
        self.p_star = float(p_star)
        self.w0 = parse_weight(w0)
        self.workers = get_worker_count(workers)


    def __str__(self):
        return (
            f'{self.__class__.__name__}(B={self.B}, seed={self.seed}, alpha={self.alpha}, '
            f'p_star={self.p_star}, w0={self.w0})'
        )


    def __repr__(self):
        return str(self)


    def replace(self, **kwargs):
        """Returns a copy of the configuration with the given fields changed."""
        values = {
            'B': self.B, 'seed': self.seed, 'alpha': self.alpha, 'p_star': self.p_star,
            'w0': self.w0, 'workers': self.workers
        }
        values.update(kwargs)
        return BootstrapConfig(**values)


    def to_dict(self):
        """
        Returns the configuration echo written into reports.

        The worker count is left out since it never changes results.

        """

        return {
            'B': self.B, 'seed': self.seed, 'alpha': self.alpha, 'p_star': self.p_star,
            'w0': 'inf' if np.isinf(self.w0) else self.w0,
            'quantile_convention': QUANTILE_CONVENTION
        }


def quantile(alpha, samples):
    """
    The empirical quantile under the infimum definition.

    Parameters
    ----------
    alpha : float
        The level, in (0, 1].
    samples : array-like
        The replicate values.

    Returns
    -------
    float
        The ceil(alpha * B)-th smallest sample; when alpha * B is an
        integer, the (alpha * B)-th smallest sample.

    Raises
    ------
    AuditInputError
        Raised if samples is empty or alpha is not in (0, 1].

    """

    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise AuditInputError('Cannot take the quantile of an empty set of samples.')
    if not 0 < alpha <= 1:
        raise AuditInputError(f'Quantile level must be in (0, 1], not {alpha!r}.')

    count = samples.size
    # the tolerance absorbs rounding in alpha * B so integral products are not bumped up
    index = math.ceil(alpha * count - 1e-9)
    index = min(max(index, 1), count)
    return float(np.partition(samples, index - 1)[index - 1])


def resample_weights(seed, b, n):
    """
    The multinomial(n; 1/n, ..., 1/n) weights of replicate b.

    Parameters
    ----------
    seed : int
        The master seed.
    b : int
        The replicate index.
    n : int
        The number of records.

    Returns
    -------
    np.ndarray(int), shape (n,)
        How many times each record was drawn; sums to n. Depends only on
        (seed, b, n).

    """

    rng = np.random.default_rng([seed, b])
    return np.bincount(rng.integers(n, size=n), minlength=n)


def weight_matrix(seed, replicates, n):
    """
    Stacks the weights of several replicates.

    Parameters
    ----------
    seed : int
        The master seed.
    replicates : Sequence(int)
        The replicate indices.
    n : int
        The number of records.

    Returns
    -------
    np.ndarray, shape (len(replicates), n)
        The float weights, one row per replicate.

    """

    return np.array([resample_weights(seed, b, n) for b in replicates], dtype=float)


class ReplicateStats:
    """
    Weighted group sums for a block of bootstrap replicates.

    Parameters
    ----------
    weights : np.ndarray, shape (b, n)
        The resampling weights.
    loss : np.ndarray, shape (n,)
        The loss values.
    groups : GroupCollection
        The groups.
    theta_star : np.ndarray, shape (b,)
        The target recomputed on each replicate.
    psi : np.ndarray, shape (n,), optional
        The influence values; used only for ``psi_bar``.

    Attributes
    ----------
    count_star : np.ndarray, shape (b, groups)
        n * P*_b(G), the resampled count of each group.
    loss_star : np.ndarray, shape (b, groups)
        S*_b(G), the resampled loss sum of each group.
    psi_bar : np.ndarray, shape (b,)
        (1/n) * sum(w_i * psi_i).

    """

    def __init__(self, weights, loss, groups, theta_star, psi=None):
        self.n = weights.shape[1]
        sums = groups.group_sums(np.stack((weights, weights * loss)))
        self.count_star = sums[0]
        self.loss_star = sums[1]
        self.theta_star = np.asarray(theta_star, dtype=float)
        self.psi_bar = None if psi is None else (weights @ psi) / self.n


    @property
    def p_star(self):
        """np.ndarray, shape (b, groups): P*_b(G)."""
        return self.count_star / self.n


    def centered_mass(self):
        """np.ndarray, shape (b, groups): P*_b(G) * eps*_b(G), formed as S*/n - P* * theta*."""
        return self.loss_star / self.n - self.p_star * self.theta_star[:, None]


def replicate_statistic(kind, stats, moments, epsilon=0.0, scale=None, sign=1.0,
                        absolute=False, contributions=None):
    """
    Evaluates a per-group bootstrap statistic for a block of replicates.

    Parameters
    ----------
    kind : {'lower', 'lower_rescaled', 'boolean', 'boolean_rescaled', 'delta'}
        'lower' is P_n(G) * P*(G) * (eps*(G) - eps_hat(G)); 'lower_rescaled' divides
        it by the group scale; 'boolean' is P*(G) * (eps*(G) - eps) - P_n(G) * (eps_hat(G) - eps);
        'boolean_rescaled' divides it by the group scale; 'delta' is eps*(G) - eps_hat(G).
    stats : ReplicateStats
        The resampled group sums.
    moments : MomentCache
        The original-sample moments of the same groups.
    epsilon : float, optional
        The tolerance used by the Boolean kinds. Default is 0.
    scale : np.ndarray, optional
        The per-group scale s_hat(G) used by the rescaled kinds.
    sign : float, optional
        Multiplies the statistic; -1 evaluates the negated process. Default is 1.
    absolute : bool, optional
        If True, returns the absolute value of the statistic. Default is False.
    contributions : np.ndarray, optional
        Precomputed Boolean group sums, used instead of recomputing them.

    Returns
    -------
    np.ndarray, shape (b, groups)
        The statistic. For 'delta', NaN where the group received no
        resampled records.

    Notes
    -----
    All product kinds use P*(G) * eps*(G) = S*(G)/n - P*(G) * theta*, so a
    replicate that misses a group still contributes a well-defined value.

    """

    if kind not in STATISTIC_KINDS:
        raise AuditInputError(f'Statistic kind must be one of {STATISTIC_KINDS}, not "{kind}".')
    if kind.endswith('rescaled') and scale is None:
        raise AuditInputError(f'The "{kind}" statistic needs the per-group scale.')

    p_n = moments.p_n
    eps_hat = moments.eps_hat
    if kind in ('lower', 'lower_rescaled'):
        values = p_n * (stats.centered_mass() - stats.p_star * eps_hat)
    elif kind in ('boolean', 'boolean_rescaled'):
        if contributions is None:
            values = (
                stats.centered_mass() - stats.p_star * epsilon - p_n * (eps_hat - epsilon)
            )
        else:
            values = contributions
    else:
        with np.errstate(divide='ignore', invalid='ignore'):
            eps_star = stats.loss_star / stats.count_star - stats.theta_star[:, None]
        values = np.where(stats.count_star > 0, eps_star - eps_hat, np.nan)

    if kind.endswith('rescaled'):
        values = values / scale
    if sign != 1:
        values = sign * values
    if absolute:
        values = np.abs(values)
    return values


def bootstrap_statistics(statistic, n, config, label='bootstrap'):
    """
    Evaluates a statistic on all B replicates, in parallel and deterministically.

    Parameters
    ----------
    statistic : Callable
        Called as ``statistic(weights, replicates)`` with the float weights of a
        block of replicates (shape (b, n)) and their indices; must return an
        array whose first axis has length b.
    n : int
        The number of records.
    config : BootstrapConfig
        The resampling configuration.
    label : str, optional
        Used in log messages. Default is 'bootstrap'.

    Returns
    -------
    np.ndarray
        The concatenated outputs in replicate order, first axis of length B.

    """

    blocks = [
        range(start, min(start + CHUNK_SIZE, config.B))
        for start in range(0, config.B, CHUNK_SIZE)
    ]

    def run_block(replicates):
        weights = weight_matrix(config.seed, replicates, n)
        return np.asarray(statistic(weights, replicates))

    logger.debug(
        '%s: %d replicates in %d blocks on %d worker(s)', label, config.B, len(blocks),
        config.workers
    )
    if config.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            outputs = list(executor.map(run_block, blocks))
    else:
        outputs = [run_block(block) for block in blocks]

    return np.concatenate(outputs, axis=0)
