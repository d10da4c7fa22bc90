# -*- coding: utf-8 -*-
"""Auditing over distribution shifts in the non-negative unit ball of an RKHS.

A shift is a non-negative function h with RKHS norm at most 1. Its tilted
disparity is eps_hat(h) = sum(h_i * (L_i - theta_hat)) / sum(h_i), and a single
bootstrap critical value t* gives lower bounds

    eps_lb(h) = eps_hat(h) - t* / mean(h)^2

that hold simultaneously for every such h, so any number of shift queries
can reuse one bootstrap run.

The supremum over the unit ball of the bootstrap process is a quadratic
form in h, which reduces to the top eigenvalue of R M R, where R is the
symmetric square root of the kernel matrix and M the symmetrized process
matrix. Without an estimated target, M has rank at most 4 and the
eigenvalue is found from a 4 x 4 problem.

"""

import hashlib
import logging

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial.distance import cdist

from .audit_trail import resolve_target
from .bootstrap import QUANTILE_CONVENTION, bootstrap_statistics, quantile
from .utils import AuditInputError, DegenerateDataError, readonly, validate_level


logger = logging.getLogger(__name__)

__all__ = [
    'KernelSpec', 'KernelFactor', 'ShiftQuery', 'RKHSCriticalValue', 'kernel_matrix',
    'rkhs_critical_value', 'shift_disparity', 'shift_lower_bound', 'shift_report',
    'population_sup_discrete', 'trail_fingerprint'
]

THETA_CORRECTIONS = ('rank_one', 'identity')
FACTOR_TOLERANCE = 1e-8


class KernelSpec:
    """
    A bounded, positive definite kernel on the numeric covariates.

    Parameters
    ----------
    family : {'gaussian', 'laplace'}, optional
        'gaussian' is exp(-||x - x'||_2^2 / (2 * bandwidth^2)) and 'laplace' is
        exp(-||x - x'||_1 / bandwidth). Default is 'gaussian'.
    bandwidth : float, optional
        The finite, positive bandwidth. Default is 1.0.
    columns : Sequence(str), optional
        The numeric covariates the kernel acts on. If None (default), all of
        the trail's numeric covariates.

    """

    families = ('gaussian', 'laplace')

    def __init__(self, family='gaussian', bandwidth=1.0, columns=None):
        """
        Raises
        ------
        AuditInputError
            Raised if the family is unknown or the bandwidth is not finite and positive.

        """

        if family not in self.families:
            raise AuditInputError(f'Kernel family must be one of {self.families}, not "{family}".')
        bandwidth = float(bandwidth)
        if not np.isfinite(bandwidth) or bandwidth <= 0:
            raise AuditInputError(f'Kernel bandwidth must be finite and positive, not {bandwidth}.')

        self.family = family
        self.bandwidth = bandwidth
        self.columns = None if columns is None else list(columns)


    def __str__(self):
        return f'{self.__class__.__name__}(family={self.family}, bandwidth={self.bandwidth})'


    def __call__(self, x, y):
        """
        The kernel matrix between two point sets.

        Parameters
        ----------
        x : array-like, shape (n1, d)
            The first points.
        y : array-like, shape (n2, d)
            The second points.

        Returns
        -------
        np.ndarray, shape (n1, n2)
            k(x_i, y_j).

        """

        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.family == 'gaussian':
            return np.exp(-cdist(x, y, 'sqeuclidean') / (2 * self.bandwidth**2))
        return np.exp(-cdist(x, y, 'cityblock') / self.bandwidth)


    def covariates(self, trail):
        """
        The (n, d) matrix of the kernel's covariates on the audit trail.

        Raises
        ------
        AuditInputError
            Raised if a column is categorical, if there are no numeric
            columns, or if any value is not finite.

        """

        columns = self.columns if self.columns is not None else trail.numeric_columns
        if not columns:
            raise AuditInputError('The kernel needs at least one numeric covariate.')
        for column in columns:
            if trail.is_categorical(column):
                raise AuditInputError(f'Kernel covariate "{column}" must be numeric.')
        points = np.column_stack([trail.column(column) for column in columns])
        if not np.isfinite(points).all():
            raise AuditInputError('Kernel covariates must all be finite.')
        return points


    def to_dict(self):
        return {'family': self.family, 'bandwidth': self.bandwidth, 'columns': self.columns}


    @classmethod
    def from_dict(cls, values):
        return cls(values.get('family', 'gaussian'), values.get('bandwidth', 1.0),
                   values.get('columns'))


class KernelFactor:
    """
    A kernel matrix with its symmetric positive semidefinite square root.

    Parameters
    ----------
    matrix : array-like, shape (n, n)
        The symmetric kernel matrix K.

    Attributes
    ----------
    matrix : np.ndarray
        K.
    root : np.ndarray
        The symmetric R with R @ R = K, from an eigendecomposition whose
        negative eigenvalues are clamped to 0.
    spectrum : dict
        The minimum and maximum eigenvalues, the number clamped, and the
        factorization residual max|R @ R - K|.

    """

    def __init__(self, matrix):
        """
        Raises
        ------
        DegenerateDataError
            Raised if the relative residual max|R @ R - K| / max|K| exceeds 1e-8.

        """

        matrix = np.asarray(matrix, dtype=float)
        matrix = (matrix + matrix.T) / 2
        eigenvalues, vectors = linalg.eigh(matrix)
        clamped = eigenvalues < 0
        root = (vectors * np.sqrt(np.where(clamped, 0.0, eigenvalues))) @ vectors.T
        root = (root + root.T) / 2

        scale = np.abs(matrix).max()
        residual = float(np.abs(root @ root - matrix).max())
        self.spectrum = {
            'min_eigenvalue': float(eigenvalues[0]),
            'max_eigenvalue': float(eigenvalues[-1]),
            'clamped': int(clamped.sum()),
            'residual': residual,
        }
        if residual > FACTOR_TOLERANCE * scale:
            raise DegenerateDataError(
                f'Kernel square root failed: residual {residual:.3g} exceeds '
                f'{FACTOR_TOLERANCE:g} * {scale:.3g}; spectrum {self.spectrum}.'
            )
        self.matrix = readonly(matrix)
        self.root = readonly(root)


    def __len__(self):
        return self.matrix.shape[0]


def kernel_matrix(trail, spec):
    """
    Builds and factors the kernel matrix of the audit trail.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    spec : KernelSpec
        The kernel.

    Returns
    -------
    KernelFactor
        K_ij = k(x_i, x_j) and its square root.

    """

    points = spec.covariates(trail)
    return KernelFactor(spec(points, points))


def trail_fingerprint(trail, spec):
    """A SHA-256 digest of the loss and kernel covariates, used to match cached critical values."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(trail.loss).tobytes())
    digest.update(np.ascontiguousarray(spec.covariates(trail)).tobytes())
    return digest.hexdigest()


class RKHSCriticalValue:
    """
    The result of the RKHS bootstrap; reusable for any number of shift queries.

    Parameters
    ----------
    t_star : float
        The critical value.
    alpha : float
        The error level.
    quantile_level : float
        The quantile level actually used, 1 - alpha / quantile_divisor.
    kernel : dict
        The kernel description.
    estimated_theta : bool
        Whether the bootstrap accounted for estimating the target.
    theta_correction : str
        'rank_one' or 'identity'.
    config : dict
        The bootstrap configuration echo.
    n : int
        The number of records.
    fingerprint : str
        The digest of the audit trail the value was computed on.
    spectrum : dict
        The kernel factorization diagnostics.
    replicates : np.ndarray, optional
        The per-replicate top eigenvalues. Not serialized.

    """

    def __init__(self, t_star, *, alpha, quantile_level, kernel, estimated_theta,
                 theta_correction, config, n, fingerprint, spectrum, replicates=None):
        self.t_star = float(t_star)
        self.alpha = alpha
        self.quantile_level = quantile_level
        self.kernel = kernel
        self.estimated_theta = estimated_theta
        self.theta_correction = theta_correction
        self.config = config
        self.n = n
        self.fingerprint = fingerprint
        self.spectrum = spectrum
        self.replicates = replicates


    def __float__(self):
        return self.t_star


    def __str__(self):
        return f'{self.__class__.__name__}(t_star={self.t_star:.6g}, n={self.n})'


    def to_dict(self):
        return {
            'procedure': 'rkhs-bound',
            't_star': self.t_star,
            'alpha': self.alpha,
            'quantile_level': self.quantile_level,
            'quantile_convention': QUANTILE_CONVENTION,
            'kernel': self.kernel,
            'estimated_theta': self.estimated_theta,
            'theta_correction': self.theta_correction,
            'config': self.config,
            'n': self.n,
            'fingerprint': self.fingerprint,
            'spectrum': self.spectrum,
        }


    @classmethod
    def from_dict(cls, values):
        """
        Recreates a cached critical value.

        Raises
        ------
        AuditInputError
            Raised if a required field is missing.

        """

        try:
            return cls(
                values['t_star'], alpha=values['alpha'], quantile_level=values['quantile_level'],
                kernel=values['kernel'], estimated_theta=values['estimated_theta'],
                theta_correction=values['theta_correction'], config=values['config'],
                n=values['n'], fingerprint=values['fingerprint'], spectrum=values['spectrum']
            )
        except KeyError as error:
            raise AuditInputError(f'Cached critical value is missing the field {error}.')


def _process_coefficients(t, n, correction):
    """
    The 4 x 4 coefficients of the symmetrized process in the basis [w*L, 1, w, L].

    The symmetric part of (1/n^2) * ((w*L) 1^T - w L^T) is U C U^T with
    C[0, 1] = C[1, 0] = 1 and C[2, 3] = C[3, 2] = -1, all over 2 n^2. The
    rank-one target correction -t * 11^T / n^2 adds -2 t to C[1, 1].

    Notes
    -----
    The 'rank_one' correction is the first-order form of -t * P_n[h] * P*[h],
    unlike the -t * I form kept as 'identity'.

    """

    coefficients = np.zeros((4, 4))
    coefficients[0, 1] = coefficients[1, 0] = 1.0
    coefficients[2, 3] = coefficients[3, 2] = -1.0
    if correction == 'rank_one':
        coefficients[1, 1] = -2.0 * t
    return coefficients / (2 * n**2)


def _top_eigenvalue_low_rank(root_basis, coefficients, n):
    """
    lambda_max of R U C U^T R from the thin QR decomposition R U = Q T.

    The nonzero spectrum of Q (T C T^T) Q^T equals that of T C T^T; for
    n > 4 the remaining eigenvalues are zero.

    """

    _, upper = linalg.qr(root_basis, mode='economic')
    top = linalg.eigvalsh(upper @ coefficients @ upper.T)[-1]
    return max(top, 0.0) if n > 4 else top


def _process_matrix(weights, loss, t, correction):
    """The dense symmetrized process matrix (A + A^T) / 2 for one replicate."""
    n = loss.size
    ones = np.ones(n)
    weighted = weights * loss
    matrix = (
        np.outer(weighted, ones) + np.outer(ones, weighted)
        - np.outer(weights, loss) - np.outer(loss, weights)
    ) / (2 * n**2)
    if correction == 'rank_one':
        matrix -= t * np.outer(ones, ones) / n**2
    else:
        matrix -= t * np.eye(n) / n**2
    return matrix


def rkhs_critical_value(trail, target, spec, config, estimated_theta=None,
                        theta_correction='rank_one', quantile_divisor=1.0, factor=None,
                        low_rank=True):
    """
    Bootstraps the critical value of the RKHS shift process.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    spec : KernelSpec
        The kernel.
    config : BootstrapConfig
        The resampling configuration.
    estimated_theta : bool, optional
        If True, each replicate adds the target-estimation term with
        t = (1/n) * sum((w_i - 1) * psi_i). If None (default), True for any
        target that is not fixed.
    theta_correction : {'rank_one', 'identity'}, optional
        How the target-estimation term enters the process matrix. 'rank_one'
        (default) subtracts t * 11^T / n^2, which is the term -t * mean(h)^2 of
        the linearized process; 'identity' subtracts t * I / n^2 and always
        uses dense eigensolves.
    quantile_divisor : float, optional
        The critical value is the 1 - alpha / quantile_divisor quantile of the
        replicates. Default is 1.
    factor : KernelFactor, optional
        A precomputed factorization of the trail's kernel matrix.
    low_rank : bool, optional
        If True (default), uses the rank-4 reduction when possible; False
        forces dense eigensolves, which give the same values.

    Returns
    -------
    RKHSCriticalValue
        The critical value and its provenance.

    Raises
    ------
    DegenerateDataError
        Raised if the loss has zero variance or the kernel cannot be factored.
    AuditInputError
        Raised if theta_correction or quantile_divisor is invalid.

    """

    if theta_correction not in THETA_CORRECTIONS:
        raise AuditInputError(
            f'theta_correction must be one of {THETA_CORRECTIONS}, not "{theta_correction}".'
        )
    if not quantile_divisor >= 1:
        raise AuditInputError(f'quantile_divisor must be >= 1, not {quantile_divisor!r}.')
    level = 1 - validate_level(config.alpha / quantile_divisor)

    loss = trail.loss
    n = trail.n
    if n < 2 or loss.var(ddof=1) <= 0:
        raise DegenerateDataError('degenerate loss: zero pooled variance')
    if estimated_theta is None:
        estimated_theta = not target.is_fixed
    _, psi = resolve_target(trail, target)
    if not estimated_theta:
        psi = np.zeros(n)

    if factor is None:
        factor = kernel_matrix(trail, spec)
    root = factor.root
    root_ones = root @ np.ones(n)
    root_loss = root @ loss
    dense = not low_rank or (estimated_theta and theta_correction == 'identity')

    def statistic(weights, replicates):
        shifts = ((weights - 1) @ psi) / n
        output = np.empty(weights.shape[0])
        if dense:
            for j, (w, t) in enumerate(zip(weights, shifts)):
                matrix = root @ _process_matrix(w, loss, t, theta_correction) @ root
                output[j] = linalg.eigvalsh((matrix + matrix.T) / 2)[-1]
            return output

        root_weighted_loss = root @ (weights * loss).T
        root_weights = root @ weights.T
        for j, t in enumerate(shifts):
            basis = np.column_stack(
                (root_weighted_loss[:, j], root_ones, root_weights[:, j], root_loss)
            )
            output[j] = _top_eigenvalue_low_rank(
                basis, _process_coefficients(t, n, theta_correction), n
            )
        return output

    replicates = bootstrap_statistics(statistic, n, config, label='rkhs')
    t_star = quantile(level, replicates)
    logger.info('rkhs: t* = %.6g at quantile level %.4g', t_star, level)

    return RKHSCriticalValue(
        t_star, alpha=config.alpha, quantile_level=level, kernel=spec.to_dict(),
        estimated_theta=bool(estimated_theta), theta_correction=theta_correction,
        config=config.to_dict(), n=n, fingerprint=trail_fingerprint(trail, spec),
        spectrum=factor.spectrum, replicates=replicates
    )


class ShiftQuery:
    """
    A non-negative shift h in the RKHS unit ball.

    Use :meth:`from_values` or :meth:`from_expansion` to create a ShiftQuery.

    Parameters
    ----------
    values : array-like, shape (n,), optional
        h evaluated at the audit points.
    norm_bound : float, optional
        The caller's certificate that ||h|| <= norm_bound; required with values.
    anchors : array-like, shape (m, d), optional
        The anchor points a_j of the expansion h = sum(c_j * k(., a_j)).
    coefficients : array-like, shape (m,), optional
        The expansion coefficients c_j.
    kernel : KernelSpec, optional
        The kernel of the expansion.
    name : str, optional
        A label used in reports.

    Attributes
    ----------
    norm : float
        The RKHS norm: computed as sqrt(c^T K_aa c) for an expansion, or the
        declared bound for point values.
    norm_verified : bool
        True only for expansions.

    """

    def __init__(self, *, values=None, norm_bound=None, anchors=None, coefficients=None,
                 kernel=None, name=None):
        """
        Raises
        ------
        AuditInputError
            Raised if neither or both representations are given, or if the
            norm exceeds 1.

        """

        self.name = name
        if (values is None) == (coefficients is None):
            raise AuditInputError('Give either point values or expansion coefficients, not both.')

        if values is not None:
            if norm_bound is None:
                raise AuditInputError('Point-value shifts need a declared norm bound.')
            self.representation = 'values'
            self.values = readonly(np.asarray(values, dtype=float).ravel())
            self.norm = float(norm_bound)
            self.norm_verified = False
            self.anchors = self.coefficients = self.kernel = None
        else:
            if anchors is None or kernel is None:
                raise AuditInputError('Expansion shifts need anchors and a kernel.')
            anchors = np.asarray(anchors, dtype=float)
            if anchors.ndim == 1:
                anchors = anchors[:, None]
            coefficients = np.asarray(coefficients, dtype=float).ravel()
            if anchors.shape[0] != coefficients.size:
                raise AuditInputError(
                    f'Got {anchors.shape[0]} anchors but {coefficients.size} coefficients.'
                )
            self.representation = 'expansion'
            self.anchors = readonly(anchors)
            self.coefficients = readonly(coefficients)
            self.kernel = kernel
            self.values = None
            self.norm = float(np.sqrt(max(coefficients @ kernel(anchors, anchors) @ coefficients, 0.0)))
            self.norm_verified = True

        if not np.isfinite(self.norm) or self.norm > 1 + 1e-10:
            raise AuditInputError(f'The shift must lie in the unit ball, but its norm is {self.norm}.')


    def __str__(self):
        return f'{self.__class__.__name__}(name={self.name}, representation={self.representation})'


    @classmethod
    def from_values(cls, values, norm_bound, name=None):
        """A shift given by its values at the audit points and a declared norm bound."""
        return cls(values=values, norm_bound=norm_bound, name=name)


    @classmethod
    def from_expansion(cls, anchors, coefficients, kernel, name=None):
        """A shift h = sum(c_j * k(., a_j)); its norm is verified."""
        return cls(anchors=anchors, coefficients=coefficients, kernel=kernel, name=name)


    def evaluate(self, trail):
        """
        The values of h at the audit points.

        Parameters
        ----------
        trail : AuditTrail
            The audit trail.

        Returns
        -------
        np.ndarray, shape (n,)
            h(x_i).

        Raises
        ------
        AuditInputError
            Raised if the number of values does not match the trail, if h is
            negative at any audit point, or if h has no mass on the sample.

        """

        if self.representation == 'values':
            values = self.values
            if values.size != trail.n:
                raise AuditInputError(
                    f'The shift has {values.size} values, but the audit trail has {trail.n} records.'
                )
        else:
            values = (self.kernel(self.kernel.covariates(trail), self.anchors) @ self.coefficients)

        if not np.isfinite(values).all():
            raise AuditInputError('Shift values must be finite.')
        if np.any(values < -1e-12 * max(np.abs(values).max(), 1.0)):
            raise AuditInputError('The shift is negative at some audit points.')
        if not values.mean() > 0:
            raise AuditInputError('shift has no mass on sample')
        return values


    def verification(self, n):
        """A description of what was checked for this shift."""
        norm_text = 'norm verified' if self.norm_verified else 'norm declared by caller'
        return f'{norm_text}; non-negativity verified at {n} points'


def shift_disparity(trail, target, query):
    """
    The tilted disparity sum(h_i * (L_i - theta_hat)) / sum(h_i).

    Raises
    ------
    AuditInputError
        Raised if the shift has no mass on the sample.

    """

    theta_hat, _ = resolve_target(trail, target)
    values = query.evaluate(trail)
    return float(values @ (trail.loss - theta_hat) / values.sum())


def shift_lower_bound(trail, target, query, t_star):
    """
    The simultaneous lower bound eps_hat(h) - t* / mean(h)^2.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    query : ShiftQuery
        The shift.
    t_star : float or RKHSCriticalValue
        The critical value from :func:`rkhs_critical_value` on the same trail.

    Returns
    -------
    float
        The lower bound on the tilted disparity.

    """

    mass = query.evaluate(trail).mean()
    return shift_disparity(trail, target, query) - float(t_star) / mass**2


def shift_report(trail, target, queries, critical_value):
    """
    Evaluates several shift queries against one critical value.

    Parameters
    ----------
    trail : AuditTrail
        The audit trail.
    target : TargetSpec
        The target definition.
    queries : Sequence(ShiftQuery)
        The shifts.
    critical_value : RKHSCriticalValue
        The cached critical value.

    Returns
    -------
    pd.DataFrame
        Columns name, mean_h, eps_hat, lower, norm, and verification.

    Raises
    ------
    AuditInputError
        Raised if the critical value was computed on a different audit trail.

    """

    if isinstance(critical_value, RKHSCriticalValue):
        spec = KernelSpec.from_dict(critical_value.kernel)
        if critical_value.fingerprint != trail_fingerprint(trail, spec):
            raise AuditInputError('The cached critical value was computed on a different audit trail.')

    rows = []
    for index, query in enumerate(queries):
        mass = float(query.evaluate(trail).mean())
        rows.append({
            'name': query.name if query.name is not None else f'query_{index}',
            'mean_h': mass,
            'eps_hat': shift_disparity(trail, target, query),
            'lower': shift_lower_bound(trail, target, query, critical_value),
            'norm': query.norm,
            'verification': query.verification(trail.n),
        })
    return pd.DataFrame(rows)


def population_sup_discrete(atoms, probabilities, conditional_means, trail, spec, theta):
    """
    The supremum of the shift process against a known discrete population.

    Computes sup over the RKHS unit ball of
    E_P[h] * E_n[(L - theta) h] - E_n[h] * E_P[(L - theta) h], the quantity whose
    distribution the bootstrap critical value approximates.

    Parameters
    ----------
    atoms : array-like, shape (m,) or (m, d)
        The support points of the covariate distribution.
    probabilities : array-like, shape (m,)
        The probability of each atom; must sum to 1.
    conditional_means : array-like, shape (m,)
        E[L | X = atom].
    trail : AuditTrail
        The sample.
    spec : KernelSpec
        The kernel.
    theta : float
        The known target theta_P.

    Returns
    -------
    float
        The supremum, which is >= 0 since h = 0 is in the ball.

    Raises
    ------
    AuditInputError
        Raised if the probabilities do not sum to 1 within 1e-12, or if the
        inputs have mismatched lengths.

    Notes
    -----
    Only the values of h on the atoms and the sample points enter the
    objective, so the supremum is the top eigenvalue of R M R on that joint
    anchor set, where R is the square root of its kernel matrix.

    """

    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    probabilities = np.asarray(probabilities, dtype=float).ravel()
    conditional_means = np.asarray(conditional_means, dtype=float).ravel()
    if not (atoms.shape[0] == probabilities.size == conditional_means.size):
        raise AuditInputError('atoms, probabilities, and conditional_means must have equal lengths.')
    if abs(probabilities.sum() - 1) > 1e-12:
        raise AuditInputError(f'Atom probabilities must sum to 1, not {probabilities.sum()!r}.')

    sample = spec.covariates(trail)
    if sample.shape[1] != atoms.shape[1]:
        raise AuditInputError('Atoms and kernel covariates have different dimensions.')
    anchors, inverse = np.unique(np.vstack((atoms, sample)), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    atom_index = inverse[:atoms.shape[0]]
    sample_index = inverse[atoms.shape[0]:]
    size = anchors.shape[0]
    n = trail.n

    population_mass = np.bincount(atom_index, weights=probabilities, minlength=size)
    population_loss = np.bincount(
        atom_index, weights=probabilities * (conditional_means - theta), minlength=size
    )
    sample_mass = np.bincount(sample_index, minlength=size) / n
    sample_loss = np.bincount(sample_index, weights=trail.loss - theta, minlength=size) / n

    matrix = (
        np.outer(population_mass, sample_loss) + np.outer(sample_loss, population_mass)
        - np.outer(sample_mass, population_loss) - np.outer(population_loss, sample_mass)
    ) / 2
    root = KernelFactor(spec(anchors, anchors)).root
    product = root @ matrix @ root
    return max(float(linalg.eigvalsh((product + product.T) / 2)[-1]), 0.0)
