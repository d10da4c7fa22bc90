# -*- coding: utf-8 -*-
"""Contains the audit trail, the target definitions, and the per-group moments.

The audit trail holds the per-record losses of a fixed model on held-out
data along with the covariates that define subpopulations. Everything
downstream (bounds, certificates, flags, shift audits) is computed from
an AuditTrail, a resolved target, and the MomentCache built from them.

"""


import numpy as np
import pandas as pd

from .utils import AuditInputError, DegenerateDataError, format_rows, readonly


__all__ = [
    'AuditTrail', 'TargetSpec', 'MomentCache', 'resolve_target', 'empirical_disparity',
    'sigma_hat', 's_hat', 'shrinkage_scale'
]


class AuditTrail:
    """
    An immutable table of per-record losses and group-defining covariates.

    Parameters
    ----------
    loss : array-like, shape (n,)
        The loss values L_i of the audited model on each record. Must be finite.
    numeric : dict(str, array-like), optional
        Numeric covariates, with column names as keys.
    categorical : dict(str, array-like), optional
        Categorical covariates, with column names as keys. Labels are converted
        to strings, and the integer codes are assigned by first appearance.
    record_ids : array-like, optional
        Opaque labels for each record. Converted to strings.
    loss_name : str, optional
        The name of the loss column, used when writing the trail back to
        a file. Default is 'loss'.

    Attributes
    ----------
    n : int
        The number of records.
    levels : dict(str, tuple(str))
        The labels for each categorical column, ordered by code.

    """

    def __init__(self, loss, numeric=None, categorical=None, record_ids=None,
                 loss_name='loss'):
        """
        Raises
        ------
        AuditInputError
            Raised if the trail is empty, if the loss contains non-finite values,
            if any column has the wrong length, or if column names are repeated.

        """

        loss = np.asarray(loss, dtype=float).ravel()
        if loss.size < 1:
            raise AuditInputError('An audit trail must contain at least one record.')
        bad_rows = np.flatnonzero(~np.isfinite(loss))
        if bad_rows.size:
            raise AuditInputError(
                f'Loss values must be finite; non-finite values at records {format_rows(bad_rows)}.'
            )

        self.loss_name = loss_name
        self._loss = readonly(loss)
        self.n = loss.size

        self._numeric = {}
        for name, values in (numeric or {}).items():
            values = np.asarray(values, dtype=float).ravel()
            self._check_length(name, values)
            self._numeric[name] = readonly(values)

        self._codes = {}
        self.levels = {}
        for name, values in (categorical or {}).items():
            if name in self._numeric:
                raise AuditInputError(f'Column "{name}" was given as both numeric and categorical.')
            labels = pd.Series(np.asarray(values, dtype=object).ravel())
            self._check_length(name, labels)
            if labels.isna().any():
                raise AuditInputError(
                    f'Categorical column "{name}" has missing values at records '
                    f'{format_rows(np.flatnonzero(labels.isna().to_numpy()))}.'
                )
            codes, uniques = pd.factorize(labels.astype(str), sort=False)
            self._codes[name] = readonly(codes, dtype=np.intp)
            self.levels[name] = tuple(str(level) for level in uniques)

        if loss_name in self._numeric or loss_name in self._codes:
            raise AuditInputError(f'Covariate name "{loss_name}" clashes with the loss column.')

        if record_ids is None:
            self.record_ids = None
        else:
            record_ids = tuple(str(record) for record in np.asarray(record_ids, dtype=object).ravel())
            self._check_length('record_ids', record_ids)
            self.record_ids = record_ids


    def __str__(self):
        return f'{self.__class__.__name__}(n={self.n}, columns={self.columns})'


    def __repr__(self):
        return str(self)


    def _check_length(self, name, values):
        """Ensures a column has exactly n entries."""
        if len(values) != self.n:
            raise AuditInputError(
                f'Column "{name}" has {len(values)} entries, but the audit trail has {self.n} records.'
            )


    @property
    def loss(self):
        """np.ndarray: The read-only loss vector."""
        return self._loss


    @property
    def numeric_columns(self):
        """list(str): The names of the numeric covariates."""
        return list(self._numeric)


    @property
    def categorical_columns(self):
        """list(str): The names of the categorical covariates."""
        return list(self._codes)


    @property
    def columns(self):
        """list(str): The names of all covariates, numeric first."""
        return self.numeric_columns + self.categorical_columns


    def is_categorical(self, name):
        """
        Returns True if the named covariate is categorical.

        Raises
        ------
        AuditInputError
            Raised if the covariate does not exist.

        """

        if name in self._codes:
            return True
        elif name in self._numeric:
            return False
        else:
            raise AuditInputError(
                f'Column "{name}" is not in the audit trail; available columns are {self.columns}.'
            )


    def column(self, name):
        """
        Returns the values of a covariate.

        Parameters
        ----------
        name : str
            The covariate name.

        Returns
        -------
        np.ndarray
            The float values for a numeric covariate, or the integer codes
            for a categorical covariate.

        """

        if self.is_categorical(name):
            return self._codes[name]
        return self._numeric[name]


    def labels(self, name):
        """
        Returns the string labels of a categorical covariate for each record.

        Raises
        ------
        AuditInputError
            Raised if the covariate is not categorical.

        """

        if not self.is_categorical(name):
            raise AuditInputError(f'Column "{name}" is numeric, not categorical.')
        return np.asarray(self.levels[name], dtype=object)[self._codes[name]]


    def subset(self, mask):
        """
        Creates a new AuditTrail containing only the selected records.

        Parameters
        ----------
        mask : array-like(bool), shape (n,)
            True for each record to keep.

        Returns
        -------
        AuditTrail
            The new trail. Categorical codes are reassigned by first appearance
            within the subset.

        Raises
        ------
        AuditInputError
            Raised if the mask has the wrong length or selects no records.

        """

        mask = np.asarray(mask, dtype=bool).ravel()
        self._check_length('mask', mask)
        if not mask.any():
            raise AuditInputError('Cannot take an empty subset of an audit trail.')

        return AuditTrail(
            self._loss[mask],
            numeric={name: values[mask] for name, values in self._numeric.items()},
            categorical={name: self.labels(name)[mask] for name in self._codes},
            record_ids=None if self.record_ids is None else np.asarray(self.record_ids, dtype=object)[mask],
            loss_name=self.loss_name
        )


    def binary_column(self, name):
        """
        Returns a covariate holding only the values 0 and 1 as integers.

        Categorical labels must read as the numbers 0 and 1.

        Raises
        ------
        AuditInputError
            Raised if the column holds any other value.

        """

        if self.is_categorical(name):
            try:
                values = np.array([float(label) for label in self.labels(name)])
            except ValueError:
                raise AuditInputError(f'Column "{name}" must hold only the values 0 and 1.')
        else:
            values = self.column(name)
        if not np.isin(values, (0, 1)).all():
            raise AuditInputError(f'Column "{name}" must hold only the values 0 and 1.')
        return values.astype(int)


    def to_frame(self):
        """
        Returns the trail as a pandas DataFrame.

        The columns are the record ids (if present), the loss, the numeric
        covariates, and the categorical labels, in that order.

        """

        data = {}
        if self.record_ids is not None:
            data['record_id'] = list(self.record_ids)
        data[self.loss_name] = self._loss
        data.update(self._numeric)
        for name in self._codes:
            data[name] = self.labels(name)
        return pd.DataFrame(data)


    def equals(self, other):
        """
        Returns True if the other trail holds identical records and columns.

        Categorical columns are compared by their labels, so two trails whose
        levels were discovered in a different order still compare equal.

        """

        if not isinstance(other, AuditTrail) or other.n != self.n:
            return False
        if (other.loss_name != self.loss_name
                or other.numeric_columns != self.numeric_columns
                or other.categorical_columns != self.categorical_columns):
            return False
        if other.record_ids != self.record_ids:
            return False
        if not np.array_equal(other.loss, self.loss):
            return False
        for name in self._numeric:
            if not np.array_equal(other.column(name), self.column(name), equal_nan=True):
                return False
        for name in self._codes:
            if not np.array_equal(other.labels(name), self.labels(name)):
                return False
        return True


class TargetSpec:
    """
    Defines the target threshold theta and its influence function psi.

    Use the classmethods :meth:`fixed`, :meth:`pooled_mean`,
    :meth:`reference_mean`, and :meth:`custom` to create a TargetSpec.

    Parameters
    ----------
    kind : {'fixed', 'pooled_mean', 'reference_mean', 'custom'}
        The kind of target.
    theta : float, optional
        The known target for 'fixed', or the estimate for 'custom'.
    reference : array-like(bool), optional
        The reference-group membership for 'reference_mean'.
    psi : array-like, optional
        The per-record influence values for 'custom'.

    """

    kinds = ('fixed', 'pooled_mean', 'reference_mean', 'custom')

    def __init__(self, kind, theta=None, reference=None, psi=None):
        """
        Raises
        ------
        AuditInputError
            Raised if kind is unknown or if the fields needed by the kind are missing.

        """

        if kind not in self.kinds:
            raise AuditInputError(f'Target kind must be one of {self.kinds}, not "{kind}".')
        if kind in ('fixed', 'custom'):
            if theta is None or not np.isfinite(theta):
                raise AuditInputError(f'A {kind} target requires a finite theta.')
            theta = float(theta)
        if kind == 'reference_mean':
            if reference is None:
                raise AuditInputError('A reference_mean target requires a reference membership.')
            reference = readonly(np.asarray(reference).ravel(), dtype=bool)
        if kind == 'custom':
            if psi is None:
                raise AuditInputError('A custom target requires the influence values psi.')
            psi = np.asarray(psi, dtype=float).ravel()
            if not np.isfinite(psi).all():
                raise AuditInputError('Custom influence values psi must be finite.')
            psi = readonly(psi)

        self.kind = kind
        self.theta = theta
        self.reference = reference
        self.psi = psi


    def __str__(self):
        if self.kind == 'fixed':
            return f'{self.__class__.__name__}(kind=fixed, theta={self.theta})'
        return f'{self.__class__.__name__}(kind={self.kind})'


    @classmethod
    def fixed(cls, theta):
        """A known target theta_P with zero influence."""
        return cls('fixed', theta=theta)


    @classmethod
    def pooled_mean(cls):
        """The mean loss over all records."""
        return cls('pooled_mean')


    @classmethod
    def reference_mean(cls, reference):
        """The mean loss over a reference group given as a boolean membership vector."""
        return cls('reference_mean', reference=reference)


    @classmethod
    def custom(cls, theta_hat, psi):
        """A user-supplied estimate with its per-record influence values."""
        return cls('custom', theta=theta_hat, psi=psi)


    @property
    def is_fixed(self):
        """bool: True if the target is known rather than estimated."""
        return self.kind == 'fixed'


    def to_dict(self):
        """Returns a JSON-friendly description of the target (without per-record arrays)."""
        output = {'kind': self.kind}
        if self.kind in ('fixed', 'custom'):
            output['theta'] = self.theta
        if self.kind == 'reference_mean':
            output['reference_size'] = int(self.reference.sum())
        return output


    def resample_theta(self, weights, loss, theta_hat, psi):
        """
        Recomputes the target on each bootstrap resample.

        Parameters
        ----------
        weights : np.ndarray, shape (b, n)
            The multinomial resampling weights, one row per replicate.
        loss : np.ndarray, shape (n,)
            The loss values.
        theta_hat : float
            The target estimated on the original sample.
        psi : np.ndarray, shape (n,)
            The influence values on the original sample.

        Returns
        -------
        theta_star : np.ndarray, shape (b,)
            The resampled target for each replicate.
        fallbacks : np.ndarray(bool), shape (b,)
            True for replicates whose reference group received no resampled
            records; those replicates reuse theta_hat.

        Notes
        -----
        A custom target is resampled through its linear expansion,
        theta_hat + (1/n) * sum((w_i - 1) * psi_i).

        """

        num_replicates, n = weights.shape
        fallbacks = np.zeros(num_replicates, dtype=bool)
        if self.kind == 'fixed':
            theta_star = np.full(num_replicates, self.theta)
        elif self.kind == 'pooled_mean':
            theta_star = (weights @ loss) / n
        elif self.kind == 'reference_mean':
            reference_weights = weights[:, self.reference]
            totals = reference_weights.sum(axis=1)
            sums = reference_weights @ loss[self.reference]
            empty = totals == 0
            fallbacks = empty
            theta_star = np.full(num_replicates, theta_hat)
            theta_star[~empty] = sums[~empty] / totals[~empty]
        else:
            theta_star = theta_hat + ((weights - 1) @ psi) / n

        return theta_star, fallbacks


def resolve_target(trail, spec):
    """
    Computes the target estimate and its influence function on the audit trail.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    spec : TargetSpec
        The target definition.

    Returns
    -------
    theta_hat : float
        The target estimate (theta_P itself for a fixed target).
    psi : np.ndarray, shape (n,)
        The read-only influence values.

    Raises
    ------
    AuditInputError
        Raised if a reference group is empty or has the wrong length, or if
        custom influence values have the wrong length.

    """

    loss = trail.loss
    if spec.kind == 'fixed':
        return spec.theta, readonly(np.zeros(trail.n))

    elif spec.kind == 'pooled_mean':
        theta_hat = float(loss.mean())
        return theta_hat, readonly(loss - theta_hat)

    elif spec.kind == 'reference_mean':
        reference = spec.reference
        if reference.size != trail.n:
            raise AuditInputError(
                f'Reference membership has {reference.size} entries, but the audit trail has {trail.n} records.'
            )
        count = int(reference.sum())
        if count == 0:
            raise AuditInputError('empty reference group')
        theta_hat = float(loss[reference].mean())
        psi = np.where(reference, loss - theta_hat, 0.0) / (count / trail.n)
        return theta_hat, readonly(psi)

    else:
        if spec.psi.size != trail.n:
            raise AuditInputError(
                f'Custom psi has {spec.psi.size} entries, but the audit trail has {trail.n} records.'
            )
        return spec.theta, spec.psi


def empirical_disparity(trail, theta_hat, membership):
    """
    The plug-in disparity: the mean loss over the group minus theta_hat.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    theta_hat : float
        The target estimate.
    membership : array-like(bool), shape (n,)
        The group membership.

    Returns
    -------
    float
        The disparity estimate, or NaN if the group has no members (the
        disparity is undefined and the caller decides how to treat it).

    """

    membership = np.asarray(membership, dtype=bool).ravel()
    if membership.size != trail.n:
        raise AuditInputError(
            f'Membership has {membership.size} entries, but the audit trail has {trail.n} records.'
        )
    if not membership.any():
        return np.nan
    return float(trail.loss[membership].mean() - theta_hat)


class MomentCache:
    """
    Per-group empirical moments shared by every audit procedure.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    groups : GroupCollection
        The groups. Only its ``group_sums`` method is used.
    theta_hat : float
        The resolved target.
    psi : np.ndarray, shape (n,)
        The resolved influence values.

    Attributes
    ----------
    counts : np.ndarray(int)
        The number of records in each group.
    p_n : np.ndarray
        counts / n.
    mean_loss : np.ndarray
        The mean loss within each group (NaN for empty groups).
    var_loss : np.ndarray
        The sample variance (1/(m - 1) divisor) of the loss within each group;
        0 for groups with fewer than two records.
    cov_loss_psi : np.ndarray
        The sample covariance of loss and psi within each group; 0 for groups
        with fewer than two records.
    degenerate : np.ndarray(bool)
        True for groups with at most one record.
    eps_hat : np.ndarray
        mean_loss - theta_hat (NaN for empty groups).
    sigma : np.ndarray
        The asymptotic standard deviation estimate for each group.
    sigma_clamped : np.ndarray(bool)
        True where the variance estimate was negative and clamped to 0.
    total_var_loss : float
        The sample variance of the loss over all records.
    var_psi : float
        The sample variance of psi over all records.

    Notes
    -----
    Sums are accumulated on the loss centered at its overall mean so that
    the one-pass variance formula keeps its precision.

    """

    def __init__(self, trail, groups, theta_hat, psi):
        self.n = trail.n
        self.theta_hat = float(theta_hat)
        loss = trail.loss
        psi = np.asarray(psi, dtype=float)
        center = loss.mean()
        centered = loss - center
        psi_center = psi.mean()
        centered_psi = psi - psi_center

        stacked = np.vstack([
            np.ones(self.n), centered, centered**2, centered_psi, centered * centered_psi
        ])
        sums = groups.group_sums(stacked)
        counts = np.rint(sums[0]).astype(int)

        with np.errstate(divide='ignore', invalid='ignore'):
            mean_centered = sums[1] / counts
            mean_psi = sums[3] / counts
            var_loss = (sums[2] - counts * mean_centered**2) / (counts - 1)
            cov_loss_psi = (sums[4] - counts * mean_centered * mean_psi) / (counts - 1)

        self.counts = counts
        self.p_n = counts / self.n
        self.degenerate = counts <= 1
        self.mean_loss = np.where(counts > 0, mean_centered + center, np.nan)
        self.var_loss = np.where(self.degenerate, 0.0, np.maximum(var_loss, 0.0))
        self.cov_loss_psi = np.where(self.degenerate, 0.0, cov_loss_psi)
        self.eps_hat = self.mean_loss - self.theta_hat

        if self.n > 1:
            self.total_var_loss = float(centered.var(ddof=1))
            self.var_psi = float(centered_psi.var(ddof=1))
        else:
            self.total_var_loss = 0.0
            self.var_psi = 0.0

        sigma_squared = self.var_loss + self.p_n * (self.var_psi - 2 * self.cov_loss_psi)
        self.sigma_clamped = sigma_squared < 0
        self.sigma = np.sqrt(np.maximum(sigma_squared, 0.0))


    def __len__(self):
        return self.counts.size


def sigma_hat(moments, group=None):
    """
    The asymptotic standard deviation estimate of a group's disparity.

    sigma^2 = Var(L|G) + P_n(G) * (Var(psi) - 2 * Cov(L, psi|G)), clamped at 0.

    Parameters
    ----------
    moments : MomentCache
        The cached moments.
    group : int or array-like(int), optional
        The group index (or indices). If None (default), all groups are returned.

    Returns
    -------
    float or np.ndarray
        The estimate(s). Clamped groups are marked in ``moments.sigma_clamped``.

    """

    if group is None:
        return moments.sigma.copy()
    output = moments.sigma[group]
    return float(output) if np.ndim(output) == 0 else output


def shrinkage_scale(p_n, sigma, total_var_loss, p_star, w0):
    """
    Computes the shrinkage-stabilized scale for groups of size fraction p_n.

    Parameters
    ----------
    p_n : float or array-like
        The fraction of records in each group.
    sigma : float or array-like
        The asymptotic standard deviation estimate of each group.
    total_var_loss : float
        The variance of the loss over all records.
    p_star : float
        The small-group threshold; group fractions below it are floored to it.
    w0 : float
        The shrinkage weight; may be ``np.inf``.

    Returns
    -------
    np.ndarray
        max(p_n, p_star)^(3/2) * (p_n/(p_n + w0) * sigma + w0/(p_n + w0) * sqrt(total_var_loss)).
        With w0 infinite, the limit max(p_n, p_star)^(3/2) * sqrt(total_var_loss).

    """

    p_n = np.asarray(p_n, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    base = np.maximum(p_n, p_star)**1.5
    pooled_sd = np.sqrt(total_var_loss)
    if np.isinf(w0):
        return base * pooled_sd * np.ones_like(sigma)
    return base * ((p_n / (p_n + w0)) * sigma + (w0 / (p_n + w0)) * pooled_sd)


def s_hat(moments, group=None, p_star=0.01, w0=np.inf):
    """
    The shrinkage-stabilized scale of one or all groups.

    Parameters
    ----------
    moments : MomentCache
        The cached moments.
    group : int or array-like(int), optional
        The group index (or indices). If None (default), all groups are returned.
    p_star : float, optional
        The small-group threshold. Default is 0.01.
    w0 : float, optional
        The shrinkage weight. Default is infinity.

    Returns
    -------
    float or np.ndarray
        The scale(s); strictly positive whenever the pooled loss variance is positive.

    Raises
    ------
    DegenerateDataError
        Raised if w0 is infinite and the pooled loss variance is zero.

    """

    if np.isinf(w0) and moments.total_var_loss <= 0:
        raise DegenerateDataError('degenerate loss: zero pooled variance')

    index = slice(None) if group is None else group
    output = shrinkage_scale(
        moments.p_n[index], moments.sigma[index], moments.total_var_loss, p_star, w0
    )
    return float(output) if np.ndim(output) == 0 else output
