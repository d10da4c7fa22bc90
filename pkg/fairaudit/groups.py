# -*- coding: utf-8 -*-
"""Builds and represents the collections of subpopulations that are audited.

Two kinds of collections exist:
    1) ExplicitGroups: a finite list of named membership vectors, built from
                       categorical intersections, a group-label column, or
                       fairness-recipe expansions.
    2) IntervalGroups: every sub-interval (e_j, e_k] of a sorted endpoint
                       grid over one numeric covariate; memberships are never
                       stored, only the bucket index of each record.

Both kinds expose ``group_sums``, which sums per-record values (or rows of
per-record values, such as bootstrap weights) over every group. Every
procedure in fairaudit only touches groups through that method and
``membership``.

"""

import itertools

import numpy as np

from .utils import AuditInputError, doc_lru_cache, format_rows, readonly


__all__ = [
    'ExplicitGroups', 'IntervalGroups', 'intersect_categorical', 'interval_grid',
    'multicalibration_expand', 'enumerate_groups', 'interval_pairs'
]


@doc_lru_cache(maxsize=32)
def interval_pairs(num_endpoints):
    """
    The endpoint index pairs (j, k), j < k, in lexicographic order.

    Parameters
    ----------
    num_endpoints : int
        The number of grid endpoints, m + 1.

    Returns
    -------
    starts : np.ndarray(int)
        The index j of each interval's left endpoint.
    stops : np.ndarray(int)
        The index k of each interval's right endpoint.

    """

    starts, stops = np.triu_indices(num_endpoints, k=1)
    return readonly(starts, dtype=np.intp), readonly(stops, dtype=np.intp)


class _GroupCollection:
    """
    Base class for collections of groups.

    Parameters
    ----------
    n : int
        The number of records in the audit trail.

    """

    kind = None

    def __init__(self, n):
        self.n = int(n)
        self.dropped = []


    def __str__(self):
        return f'{self.__class__.__name__}(groups={len(self)}, n={self.n})'


    def __repr__(self):
        return str(self)


    def __len__(self):
        return len(self.names)


    def __iter__(self):
        return self.enumerate()


    def enumerate(self):
        """
        Yields every group exactly once.

        Yields
        ------
        name : str
            The group name.
        membership : np.ndarray(bool), shape (n,)
            The group membership.

        """

        for index, name in enumerate(self.names):
            yield name, self.membership(index)


    def membership_matrix(self):
        """np.ndarray(bool), shape (n, groups): the membership of every group as columns."""
        return np.column_stack([self.membership(i) for i in range(len(self))])


    def counts(self):
        """np.ndarray(int): the number of records in each group."""
        return np.rint(self.group_sums(np.ones(self.n))).astype(int)


    @property
    def disjoint(self):
        """bool: True if no record belongs to more than one group."""
        return bool(self.group_count_per_record().max(initial=0) <= 1)


class ExplicitGroups(_GroupCollection):
    """
    A finite list of named groups given by membership vectors.

    Parameters
    ----------
    names : Sequence(str)
        The unique group names.
    memberships : Sequence(array-like(bool))
        The membership vector of each group, each of length n.
    n : int, optional
        The number of records. If None (default), taken from the first membership.
    allow_empty : bool, optional
        If False (default), groups with no members are dropped at construction
        and their names listed in ``dropped``. If True, they are kept.
    descriptors : Sequence(dict), optional
        Per-group column/level descriptions, used by the flag grid export.
    parents : Sequence(str), optional
        The name of the base group each group was expanded from, used by the
        fairness recipes.

    Attributes
    ----------
    dropped : list(str)
        The names of empty groups that were dropped.

    """

    kind = 'explicit'

    def __init__(self, names, memberships, n=None, allow_empty=False,
                 descriptors=None, parents=None):
        """
        Raises
        ------
        AuditInputError
            Raised if the names are not unique, if the number of names and
            memberships differ, if a membership has the wrong length, or if
            no non-empty group remains.

        """

        names = [str(name) for name in names]
        memberships = [np.asarray(member, dtype=bool).ravel() for member in memberships]
        if len(names) != len(memberships):
            raise AuditInputError(
                f'Got {len(names)} group names but {len(memberships)} membership vectors.'
            )
        if len(set(names)) != len(names):
            duplicates = sorted({name for name in names if names.count(name) > 1})
            raise AuditInputError(f'Group names must be unique; repeated names: {duplicates}.')
        if n is None:
            if not memberships:
                raise AuditInputError('Cannot infer the number of records from zero groups.')
            n = memberships[0].size
        super().__init__(n)

        descriptors = list(descriptors) if descriptors is not None else [None] * len(names)
        parents = list(parents) if parents is not None else [None] * len(names)

        self.names = []
        self.descriptors = []
        self.parents = []
        kept = []
        for name, member, descriptor, parent in zip(names, memberships, descriptors, parents):
            if member.size != self.n:
                raise AuditInputError(
                    f'Membership of group "{name}" has {member.size} entries, expected {self.n}.'
                )
            if not allow_empty and not member.any():
                self.dropped.append(name)
                continue
            self.names.append(name)
            self.descriptors.append(descriptor)
            self.parents.append(parent)
            kept.append(member)

        if not kept:
            raise AuditInputError('The group collection has no non-empty groups.')
        self._matrix = readonly(np.column_stack(kept), dtype=bool)
        self._float_matrix = self._matrix.astype(float)


    @classmethod
    def from_labels(cls, labels, levels=None, prefix=''):
        """
        Creates one group per distinct label.

        Parameters
        ----------
        labels : array-like
            The group label of each record.
        levels : Sequence, optional
            The labels to create groups for, in order. If None (default), the
            distinct labels in order of first appearance.
        prefix : str, optional
            Prepended to each group name. Default is ''.

        Returns
        -------
        ExplicitGroups
            The disjoint groups.

        """

        labels = np.asarray(labels, dtype=object).ravel()
        if levels is None:
            levels = list(dict.fromkeys(labels.tolist()))
        return cls(
            [f'{prefix}{level}' for level in levels],
            [labels == level for level in levels],
            n=labels.size
        )


    def membership(self, index):
        """np.ndarray(bool): the read-only membership vector of the group at index."""
        return self._matrix[:, index]


    def membership_matrix(self):
        return self._matrix


    def group_count_per_record(self):
        """np.ndarray(int): how many groups contain each record."""
        return self._matrix.sum(axis=1)


    def group_sums(self, values):
        """
        Sums per-record values over every group.

        Parameters
        ----------
        values : np.ndarray, shape (..., n)
            The per-record values; leading dimensions (such as bootstrap
            replicates) are kept.

        Returns
        -------
        np.ndarray, shape (..., groups)
            The sum over the members of each group.

        """

        return np.asarray(values, dtype=float) @ self._float_matrix


    def restrict(self, mask):
        """
        Restricts the collection to a subset of records.

        Parameters
        ----------
        mask : array-like(bool), shape (n,)
            The records to keep.

        Returns
        -------
        ExplicitGroups
            The groups over the kept records; groups left empty are dropped
            and listed in ``dropped``.

        """

        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.size != self.n:
            raise AuditInputError(f'Mask has {mask.size} entries, expected {self.n}.')
        return ExplicitGroups(
            self.names, [self._matrix[mask, i] for i in range(len(self))],
            n=int(mask.sum()), descriptors=self.descriptors, parents=self.parents
        )


    def select(self, indices):
        """Returns a new ExplicitGroups holding only the groups at the given indices."""
        indices = list(indices)
        return ExplicitGroups(
            [self.names[i] for i in indices], [self._matrix[:, i] for i in indices],
            n=self.n, allow_empty=True,
            descriptors=[self.descriptors[i] for i in indices],
            parents=[self.parents[i] for i in indices]
        )


class IntervalGroups(_GroupCollection):
    """
    All sub-intervals (e_j, e_k], j < k, of an endpoint grid over one covariate.

    Parameters
    ----------
    covariate : str
        The name of the numeric covariate.
    values : array-like, shape (n,)
        The covariate value of each record.
    endpoints : array-like
        The strictly increasing grid e_0 < ... < e_m, with m >= 1.

    Attributes
    ----------
    buckets : np.ndarray(int)
        The cell index a of each record, such that the value lies in
        (e_a, e_(a + 1)]; a value exactly equal to e_0 is placed in cell 0.
    num_buckets : int
        The number of grid cells, m.

    Notes
    -----
    The intervals are ordered lexicographically by their endpoint indices (j, k).

    """

    kind = 'interval'

    def __init__(self, covariate, values, endpoints):
        """
        Raises
        ------
        AuditInputError
            Raised if the endpoints are not strictly increasing with at least
            two entries, or if any value is outside of [e_0, e_m] or not finite.

        """

        endpoints = np.asarray(endpoints, dtype=float).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if endpoints.size < 2:
            raise AuditInputError('An interval grid needs at least two endpoints.')
        if not np.isfinite(endpoints).all() or np.any(np.diff(endpoints) <= 0):
            raise AuditInputError('Interval endpoints must be finite and strictly increasing.')
        outside = np.flatnonzero(
            ~np.isfinite(values) | (values < endpoints[0]) | (values > endpoints[-1])
        )
        if outside.size:
            raise AuditInputError(
                f'Values of "{covariate}" outside of the grid range [{endpoints[0]}, '
                f'{endpoints[-1]}] at records {format_rows(outside)}.'
            )
        super().__init__(values.size)

        self.covariate = covariate
        self.values = readonly(values)
        self.endpoints = readonly(endpoints)
        self.num_buckets = endpoints.size - 1
        buckets = np.searchsorted(endpoints, values, side='left') - 1
        buckets[buckets < 0] = 0
        self.buckets = readonly(buckets, dtype=np.intp)
        self.starts, self.stops = interval_pairs(endpoints.size)

        onehot = np.zeros((self.n, self.num_buckets))
        onehot[np.arange(self.n), self.buckets] = 1.0
        self._onehot = onehot
        self.names = self._make_names()


    def _make_names(self):
        """Creates unique names of the form '(lo, hi]' for each interval."""
        for digits in (6, 10, 17):
            labels = [f'{value:.{digits}g}' for value in self.endpoints]
            if len(set(labels)) == len(labels):
                break
        return [f'({labels[j]}, {labels[k]}]' for j, k in zip(self.starts, self.stops)]


    def bounds(self, index=None):
        """
        The (lower, upper) endpoint values of the interval(s).

        Parameters
        ----------
        index : int or array-like(int), optional
            The interval index (or indices). If None (default), all intervals.

        """

        index = slice(None) if index is None else index
        return self.endpoints[self.starts[index]], self.endpoints[self.stops[index]]


    def widths(self):
        """np.ndarray: the width e_k - e_j of every interval."""
        lower, upper = self.bounds()
        return upper - lower


    def membership(self, index):
        return (self.buckets >= self.starts[index]) & (self.buckets < self.stops[index])


    def group_count_per_record(self):
        # a record in cell a lies in (a + 1) * (m - a) intervals
        return (self.buckets + 1) * (self.num_buckets - self.buckets)


    def bucket_sums(self, values):
        """
        Sums per-record values within each grid cell.

        Parameters
        ----------
        values : np.ndarray, shape (..., n)
            The per-record values.

        Returns
        -------
        np.ndarray, shape (..., m)
            The sum within each cell; exactly 0 for cells with no records.

        """

        return np.asarray(values, dtype=float) @ self._onehot


    def prefix_sums(self, values):
        """
        Cumulative cell sums C, with C[..., 0] = 0 and C[..., k] the sum over cells < k.

        The sum over interval (e_j, e_k] is C[..., k] - C[..., j].

        """

        cell_sums = self.bucket_sums(values)
        zeros = np.zeros(cell_sums.shape[:-1] + (1,))
        return np.concatenate((zeros, np.cumsum(cell_sums, axis=-1)), axis=-1)


    def group_sums(self, values):
        prefix = self.prefix_sums(values)
        return prefix[..., self.stops] - prefix[..., self.starts]


    def nonempty_buckets(self):
        """np.ndarray(bool): True for each grid cell containing at least one record."""
        return np.bincount(self.buckets, minlength=self.num_buckets) > 0


    def restrict(self, mask):
        """
        Restricts the grid to a subset of records, keeping the same endpoints.

        Parameters
        ----------
        mask : array-like(bool), shape (n,)
            The records to keep.

        Returns
        -------
        IntervalGroups
            The grid over the kept records.

        """

        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.size != self.n:
            raise AuditInputError(f'Mask has {mask.size} entries, expected {self.n}.')
        return IntervalGroups(self.covariate, self.values[mask], self.endpoints)


    def to_explicit(self):
        """
        Converts the grid into ExplicitGroups with the same names and order.

        Empty intervals are kept so that group indices line up with the grid.

        """

        return ExplicitGroups(
            self.names, [self.membership(i) for i in range(len(self))], n=self.n,
            allow_empty=True
        )


def enumerate_groups(collection):
    """
    Yields every (name, membership) pair of a collection exactly once.

    Explicit collections yield in insertion order and interval grids in
    lexicographic order of the endpoint indices (j, k).

    """

    yield from collection.enumerate()


def intersect_categorical(trail, columns, include_marginals=False):
    """
    Creates the groups formed by intersecting categorical covariates.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    columns : Sequence(str)
        The categorical column names to cross.
    include_marginals : bool, optional
        If True, the non-empty cells of every proper, non-empty subset of
        the columns are added after the full cross-classification, ordered by
        decreasing subset size. Default is False.

    Returns
    -------
    ExplicitGroups
        One group per observed non-empty cell, named like 'race=A & sex=F'.
        The ``descriptors`` hold the {column: level} mapping of each group.

    Raises
    ------
    AuditInputError
        Raised if no columns are given, if a column is not categorical, or if
        no groups result.

    """

    columns = list(columns)
    if not columns:
        raise AuditInputError('At least one categorical column is needed for intersections.')
    if len(set(columns)) != len(columns):
        raise AuditInputError(f'Intersection columns must be unique, got {columns}.')
    for column in columns:
        if not trail.is_categorical(column):
            raise AuditInputError(f'Column "{column}" must be categorical to form intersections.')

    if include_marginals:
        subsets = [
            subset for size in range(len(columns), 0, -1)
            for subset in itertools.combinations(columns, size)
        ]
    else:
        subsets = [tuple(columns)]

    names = []
    memberships = []
    descriptors = []
    for subset in subsets:
        codes = np.column_stack([trail.column(column) for column in subset])
        observed = np.unique(codes, axis=0)
        for cell in observed:
            member = np.all(codes == cell, axis=1)
            descriptor = {
                column: trail.levels[column][code] for column, code in zip(subset, cell)
            }
            names.append(' & '.join(f'{column}={level}' for column, level in descriptor.items()))
            memberships.append(member)
            descriptors.append(descriptor)

    if not names:
        raise AuditInputError('Categorical intersections produced zero groups.')

    return ExplicitGroups(names, memberships, n=trail.n, descriptors=descriptors)


def interval_grid(trail, covariate, endpoints):
    """
    Creates the collection of all sub-intervals of an endpoint grid.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    covariate : str
        The numeric covariate.
    endpoints : array-like
        The strictly increasing endpoint grid.

    Returns
    -------
    IntervalGroups
        The m(m + 1)/2 intervals for m + 1 endpoints.

    Raises
    ------
    AuditInputError
        Raised if the covariate is categorical, or as in :class:`.IntervalGroups`.

    """

    if trail.is_categorical(covariate):
        raise AuditInputError(f'Column "{covariate}" must be numeric to form an interval grid.')
    return IntervalGroups(covariate, trail.column(covariate), endpoints)


def multicalibration_expand(base, trail, prediction_bins):
    """
    Splits every base group by the levels of a prediction-bin column.

    Parameters
    ----------
    base : ExplicitGroups
        The base groups G.
    trail : AuditTrail
        The audit trail holding the bin column.
    prediction_bins : str
        The categorical column giving the binned prediction f(X) = v.

    Returns
    -------
    ExplicitGroups
        All non-empty intersections, named 'G@v', with ``parents`` set to
        the base group names. Empty intersections are listed in ``dropped``.

    Raises
    ------
    AuditInputError
        Raised if base is not explicit or the bin column is not categorical.

    """

    if not isinstance(base, ExplicitGroups):
        raise AuditInputError('Multicalibration expansion requires explicit base groups.')
    if not trail.is_categorical(prediction_bins):
        raise AuditInputError(f'Column "{prediction_bins}" must be categorical to define bins.')
    if base.n != trail.n:
        raise AuditInputError(f'Base groups cover {base.n} records, but the trail has {trail.n}.')

    codes = trail.column(prediction_bins)
    levels = trail.levels[prediction_bins]
    names = []
    memberships = []
    parents = []
    descriptors = []
    for index, (name, member) in enumerate(base.enumerate()):
        for code, level in enumerate(levels):
            names.append(f'{name}@{level}')
            memberships.append(member & (codes == code))
            parents.append(name)
            descriptor = dict(base.descriptors[index] or {})
            descriptor[prediction_bins] = level
            descriptors.append(descriptor)

    return ExplicitGroups(
        names, memberships, n=trail.n, descriptors=descriptors, parents=parents
    )
