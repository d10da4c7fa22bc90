# -*- coding: utf-8 -*-
"""Tests for fairaudit.rkhs."""

import numpy as np
import pytest

from fairaudit.audit_trail import AuditTrail, TargetSpec
from fairaudit.bootstrap import BootstrapConfig, resample_weights
from fairaudit.rkhs import (
    KernelFactor, KernelSpec, RKHSCriticalValue, ShiftQuery, kernel_matrix,
    population_sup_discrete, rkhs_critical_value, shift_disparity, shift_lower_bound,
    shift_report, trail_fingerprint
)
from fairaudit.utils import AuditInputError, DegenerateDataError


@pytest.fixture
def shift_trail(rng):
    n = 40
    x = rng.uniform(0, 1, n)
    loss = (x - 0.5)**2 + rng.normal(0, 0.1, n)**2
    return AuditTrail(loss, numeric={'x': x})


@pytest.fixture
def rkhs_config():
    return BootstrapConfig(B=60, seed=21, alpha=0.1)


def test_kernel_values():
    gaussian = KernelSpec('gaussian', bandwidth=0.5)
    laplace = KernelSpec('laplace', bandwidth=2.0)
    x = np.array([[0.0, 0.0]])
    y = np.array([[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(gaussian(x, y), [[np.exp(-2.0 / 0.5), 1.0]])
    np.testing.assert_allclose(laplace(x, y), [[np.exp(-1.0), 1.0]])


@pytest.mark.parametrize(
    'family, bandwidth', [('cosine', 1.0), ('gaussian', 0.0), ('laplace', np.inf), ('gaussian', -1)]
)
def test_kernel_validation(family, bandwidth):
    with pytest.raises(AuditInputError):
        KernelSpec(family, bandwidth)


def test_kernel_needs_numeric_columns():
    trail = AuditTrail([1.0, 2.0], categorical={'g': ['a', 'b']})
    with pytest.raises(AuditInputError):
        KernelSpec().covariates(trail)
    with pytest.raises(AuditInputError):
        KernelSpec(columns=['g']).covariates(trail)


@pytest.mark.parametrize('family', ['gaussian', 'laplace'])
@pytest.mark.parametrize('bandwidth', [0.1, 0.5, 1.0])
def test_factor_residual(shift_trail, family, bandwidth):
    factor = kernel_matrix(shift_trail, KernelSpec(family, bandwidth))
    np.testing.assert_allclose(factor.root @ factor.root, factor.matrix, atol=1e-8)
    np.testing.assert_allclose(factor.root, factor.root.T)
    assert factor.spectrum['residual'] <= 1e-8
    assert len(factor) == shift_trail.n


def test_factor_rejects_indefinite_matrix():
    with pytest.raises(DegenerateDataError, match='square root'):
        KernelFactor([[0.0, 1.0], [1.0, 0.0]])


@pytest.mark.parametrize('target', [TargetSpec.fixed(0.1), TargetSpec.pooled_mean()])
def test_low_rank_matches_dense(shift_trail, rkhs_config, target):
    spec = KernelSpec('gaussian', 0.5)
    fast = rkhs_critical_value(shift_trail, target, spec, rkhs_config)
    dense = rkhs_critical_value(shift_trail, target, spec, rkhs_config, low_rank=False)
    scale = np.abs(dense.replicates).max()
    np.testing.assert_allclose(fast.replicates, dense.replicates, rtol=1e-7, atol=1e-9 * scale)
    assert fast.t_star == pytest.approx(dense.t_star, rel=1e-7, abs=1e-9 * scale)


def test_replicates_bound_random_shifts(shift_trail, rkhs_config):
    """Every h = R v with ||v|| = 1 is in the unit ball, so no probe beats the supremum."""
    spec = KernelSpec('gaussian', 0.3)
    factor = kernel_matrix(shift_trail, spec)
    result = rkhs_critical_value(
        shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config, factor=factor
    )
    loss = shift_trail.loss
    n = shift_trail.n
    probe_rng = np.random.default_rng(0)
    for b in range(rkhs_config.B):
        weights = resample_weights(rkhs_config.seed, b, n)
        for _ in range(20):
            v = probe_rng.normal(size=n)
            h = factor.root @ (v / np.linalg.norm(v))
            objective = (
                (weights * loss * h).sum() * h.sum() - (weights * h).sum() * (loss * h).sum()
            ) / n**2
            assert objective <= result.replicates[b] + 1e-12
    assert (result.replicates >= 0).all()


def test_estimated_theta_with_zero_influence_matches_fixed(shift_trail, rkhs_config):
    spec = KernelSpec('laplace', 0.5)
    fixed = rkhs_critical_value(shift_trail, TargetSpec.fixed(0.2), spec, rkhs_config)
    custom = TargetSpec.custom(0.2, np.zeros(shift_trail.n))
    for correction in ('rank_one', 'identity'):
        estimated = rkhs_critical_value(
            shift_trail, custom, spec, rkhs_config, estimated_theta=True,
            theta_correction=correction
        )
        assert estimated.estimated_theta
        np.testing.assert_allclose(estimated.replicates, fixed.replicates, rtol=1e-7, atol=1e-14)


def test_estimated_theta_default(shift_trail, rkhs_config):
    spec = KernelSpec('gaussian', 1.0)
    assert rkhs_critical_value(shift_trail, TargetSpec.pooled_mean(), spec, rkhs_config).estimated_theta
    assert not rkhs_critical_value(shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config).estimated_theta


def test_quantile_divisor(shift_trail, rkhs_config):
    spec = KernelSpec('gaussian', 1.0)
    result = rkhs_critical_value(
        shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config, quantile_divisor=2
    )
    assert result.quantile_level == pytest.approx(0.95)
    with pytest.raises(AuditInputError):
        rkhs_critical_value(shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config, quantile_divisor=0.5)
    with pytest.raises(AuditInputError):
        rkhs_critical_value(
            shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config, theta_correction='none'
        )


def test_constant_loss_is_degenerate(rkhs_config):
    trail = AuditTrail(np.ones(10), numeric={'x': np.linspace(0, 1, 10)})
    with pytest.raises(DegenerateDataError):
        rkhs_critical_value(trail, TargetSpec.fixed(0.0), KernelSpec(), rkhs_config)


def test_critical_value_round_trip(shift_trail, rkhs_config):
    result = rkhs_critical_value(shift_trail, TargetSpec.fixed(0.0), KernelSpec(), rkhs_config)
    output = result.to_dict()
    assert output['procedure'] == 'rkhs-bound'
    assert output['fingerprint'] == trail_fingerprint(shift_trail, KernelSpec())
    restored = RKHSCriticalValue.from_dict(output)
    assert restored.to_dict() == output
    assert float(restored) == result.t_star

    del output['fingerprint']
    with pytest.raises(AuditInputError, match='fingerprint'):
        RKHSCriticalValue.from_dict(output)


def test_shift_query_validation(shift_trail):
    n = shift_trail.n
    with pytest.raises(AuditInputError, match='unit ball'):
        ShiftQuery.from_values(np.ones(n), norm_bound=1.5)
    with pytest.raises(AuditInputError):
        ShiftQuery(values=np.ones(n), coefficients=[1.0])
    with pytest.raises(AuditInputError):
        ShiftQuery.from_values(np.ones(n - 1), 1.0).evaluate(shift_trail)

    negative = np.ones(n)
    negative[3] = -0.5
    with pytest.raises(AuditInputError, match='negative'):
        ShiftQuery.from_values(negative, 1.0).evaluate(shift_trail)
    with pytest.raises(AuditInputError, match='shift has no mass on sample'):
        ShiftQuery.from_values(np.zeros(n), 1.0).evaluate(shift_trail)


def test_expansion_norm():
    kernel = KernelSpec('gaussian', 1.0)
    query = ShiftQuery.from_expansion([[0.5]], [0.5], kernel)
    assert query.norm == pytest.approx(0.5)
    assert query.norm_verified
    assert query.verification(10) == 'norm verified; non-negativity verified at 10 points'
    # two anchors at distance 1: c^T K c = 2 * 0.4^2 * (1 + exp(-1/2))
    pair = ShiftQuery.from_expansion([0.0, 1.0], [0.4, 0.4], kernel)
    assert pair.norm == pytest.approx(np.sqrt(0.32 * (1 + np.exp(-0.5))))
    with pytest.raises(AuditInputError):
        ShiftQuery.from_expansion([[0.5]], [1.2], kernel)


def test_shift_lower_bound(shift_trail):
    h = np.linspace(0.1, 1.0, shift_trail.n)
    query = ShiftQuery.from_values(h, 1.0, name='ramp')
    theta = 0.05
    target = TargetSpec.fixed(theta)
    expected_eps = (h * (shift_trail.loss - theta)).sum() / h.sum()
    assert shift_disparity(shift_trail, target, query) == pytest.approx(expected_eps)
    bound = shift_lower_bound(shift_trail, target, query, 0.002)
    assert bound == pytest.approx(expected_eps - 0.002 / h.mean()**2)


def test_shift_report(shift_trail, rkhs_config):
    spec = KernelSpec('gaussian', 0.5)
    target = TargetSpec.pooled_mean()
    result = rkhs_critical_value(shift_trail, target, spec, rkhs_config)
    queries = [
        ShiftQuery.from_expansion([[0.0], [1.0]], [0.5, 0.5], spec, name='edges'),
        ShiftQuery.from_values(np.full(shift_trail.n, 0.5), 1.0),
    ]
    report = shift_report(shift_trail, target, queries, result)
    assert list(report.columns) == ['name', 'mean_h', 'eps_hat', 'lower', 'norm', 'verification']
    assert list(report['name']) == ['edges', 'query_1']
    np.testing.assert_allclose(
        report['lower'], report['eps_hat'] - result.t_star / report['mean_h']**2
    )
    # a constant shift recovers the pooled disparity, which is 0 for the pooled mean
    assert report.loc[1, 'eps_hat'] == pytest.approx(0.0, abs=1e-12)


def test_shift_report_rejects_other_trail(shift_trail, rkhs_config):
    spec = KernelSpec('gaussian', 0.5)
    result = rkhs_critical_value(shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config)
    other = shift_trail.subset(np.arange(shift_trail.n) > 0)
    query = ShiftQuery.from_values(np.ones(other.n), 1.0)
    with pytest.raises(AuditInputError, match='different audit trail'):
        shift_report(other, TargetSpec.fixed(0.0), [query], result)


def test_population_sup_is_zero_for_matching_sample():
    x = np.array([0.1, 0.4, 0.7, 0.9])
    loss = np.array([1.0, 0.5, 2.0, 0.0])
    trail = AuditTrail(loss, numeric={'x': x})
    value = population_sup_discrete(x, np.full(4, 0.25), loss, trail, KernelSpec('gaussian', 0.5), 0.3)
    assert 0 <= value <= 1e-12


def test_population_sup_is_positive_for_mismatch(rng):
    atoms = np.arange(11) / 10
    probabilities = np.full(11, 1 / 11)
    means = atoms**2
    x = rng.choice(atoms, size=50)
    trail = AuditTrail(x**2 + rng.normal(0, 0.5, 50), numeric={'x': x})
    value = population_sup_discrete(atoms, probabilities, means, trail, KernelSpec('gaussian', 0.3), 0.0)
    assert value > 0


def test_population_sup_validation(shift_trail):
    spec = KernelSpec()
    with pytest.raises(AuditInputError, match='sum to 1'):
        population_sup_discrete([0.0, 1.0], [0.5, 0.6], [0.0, 0.0], shift_trail, spec, 0.0)
    with pytest.raises(AuditInputError):
        population_sup_discrete([0.0, 1.0], [1.0], [0.0, 0.0], shift_trail, spec, 0.0)


def test_kernel_matrix_limits():
    trail = AuditTrail([0.0, 1.0, 2.0], numeric={'x': [0.0, 0.0, 0.7]})
    factor = kernel_matrix(trail, KernelSpec('laplace', 0.3))
    np.testing.assert_allclose(np.diag(factor.matrix), 1.0)
    wide = kernel_matrix(trail, KernelSpec('gaussian', 1e6))
    np.testing.assert_allclose(wide.matrix, 1.0, atol=1e-6)


def test_root_of_repeated_point():
    factor = KernelFactor(np.ones((2, 2)))
    np.testing.assert_allclose(factor.root, np.ones((2, 2)) / np.sqrt(2), atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(factor.root), [0.0, np.sqrt(2)], atol=1e-12)


def test_replicates_equal_dense_top_eigenvalue(shift_trail, rkhs_config):
    spec = KernelSpec('laplace', 0.2)
    factor = kernel_matrix(shift_trail, spec)
    result = rkhs_critical_value(
        shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config, factor=factor
    )
    loss = shift_trail.loss
    n = shift_trail.n
    for b in range(0, rkhs_config.B, 7):
        weights = resample_weights(rkhs_config.seed, b, n)
        process = np.outer(weights * loss, np.ones(n)) - np.outer(weights, loss)
        process = (process + process.T) / (2 * n**2)
        top = np.linalg.eigvalsh(factor.root @ process @ factor.root)[-1]
        assert result.replicates[b] == pytest.approx(max(top, 0.0), rel=1e-7, abs=1e-15)


def _dense_process(weights, loss, t=0.0):
    n = loss.size
    process = np.outer(weights * loss, np.ones(n)) - np.outer(weights, loss)
    return (process + process.T) / (2 * n**2) - t * np.ones((n, n)) / n**2


def _polished_maximum(operator, objective, rng, starts=4, steps=6):
    """
    The best objective over unit vectors v from projected ascent on v^T A v.

    Each run takes gradient steps v <- (v + A v / ||A||_F) / ||.|| from a
    random start, then is polished by Rayleigh-Ritz on the span of its path.
    The zero shift is always feasible, so the result is at least 0.

    """

    dim = operator.shape[0]
    step = 1 / np.linalg.norm(operator)
    best = 0.0
    for _ in range(starts):
        v = rng.normal(size=dim)
        path = [v / np.linalg.norm(v)]
        for _ in range(steps):
            v = path[-1] + step * (operator @ path[-1])
            path.append(v / np.linalg.norm(v))
        basis = np.linalg.qr(np.column_stack(path))[0]
        ritz = basis.T @ operator @ basis
        polished = basis @ np.linalg.eigh((ritz + ritz.T) / 2)[1][:, -1]
        best = max(best, objective(path[-1]), objective(polished))
    return best


def test_replicates_match_polished_ascent():
    rng = np.random.default_rng(2718)
    config = BootstrapConfig(B=10, seed=5, alpha=0.1)
    n = 50
    for instance in range(50):
        x = rng.uniform(0, 1, n)
        if instance % 3 == 0:
            loss = rng.exponential(1.0, n)
        else:
            loss = np.sin(3 * x) + rng.normal(0, 0.5, n)
        trail = AuditTrail(loss, numeric={'x': x})
        spec = KernelSpec(('gaussian', 'laplace')[instance % 2], rng.uniform(0.1, 1.0))
        target = TargetSpec.pooled_mean() if instance % 4 == 0 else TargetSpec.fixed(0.2)
        factor = kernel_matrix(trail, spec)
        result = rkhs_critical_value(trail, target, spec, config, factor=factor)
        psi = loss - loss.mean() if instance % 4 == 0 else np.zeros(n)
        root = factor.root

        for b in range(config.B):
            weights = resample_weights(config.seed, b, n)
            t = ((weights - 1) @ psi) / n
            process = _dense_process(weights, loss, t)

            def objective(v):
                h = root @ v
                return (
                    (weights * loss * h).sum() * h.sum() - (weights * h).sum() * (loss * h).sum()
                    - t * h.sum()**2
                ) / n**2

            best = _polished_maximum(root @ process @ root, objective, rng)
            top = result.replicates[b]
            assert best <= top * (1 + 1e-6) + 1e-10
            assert best >= 0.95 * top


def test_population_sup_matches_polished_ascent():
    rng = np.random.default_rng(31)
    atoms = np.array([0.0, 0.2, 0.45, 0.7, 1.0])
    n = 30
    for trial in range(20):
        probabilities = rng.dirichlet(np.ones(5))
        means = rng.normal(0, 1, 5)
        theta = rng.normal(0, 0.5)
        index = np.concatenate((np.arange(5), rng.choice(5, size=n - 5, p=probabilities)))
        loss = means[index] + rng.normal(0, 0.5, n)
        trail = AuditTrail(loss, numeric={'x': atoms[index]})
        spec = KernelSpec(('gaussian', 'laplace')[trial % 2], rng.uniform(0.1, 0.6))

        # h = R v on the atoms, with R the symmetric square root of the atom kernel matrix
        values, vectors = np.linalg.eigh(spec(atoms[:, None], atoms[:, None]))
        root = (vectors * np.sqrt(np.clip(values, 0, None))) @ vectors.T

        def objective(v):
            h = root @ v
            return (
                (probabilities @ h) * np.mean((loss - theta) * h[index])
                - np.mean(h[index]) * (probabilities @ ((means - theta) * h))
            )

        # the objective is a quadratic form, so polarization recovers its matrix
        basis = np.eye(5)
        operator = np.array([
            [(objective(basis[i] + basis[j]) - objective(basis[i] - basis[j])) / 4 for j in range(5)]
            for i in range(5)
        ])
        best = _polished_maximum(operator, objective, rng)
        value = population_sup_discrete(atoms, probabilities, means, trail, spec, theta)
        assert best <= value * (1 + 1e-6) + 1e-12
        assert best >= 0.95 * value


def test_top_eigenvalue_invariant_to_record_order(shift_trail, rkhs_config):
    spec = KernelSpec('gaussian', 0.4)
    result = rkhs_critical_value(shift_trail, TargetSpec.fixed(0.0), spec, rkhs_config)
    n = shift_trail.n
    order = np.random.default_rng(8).permutation(n)
    loss = shift_trail.loss[order]
    relabeled = AuditTrail(loss, numeric={'x': shift_trail.column('x')[order]})
    factor = kernel_matrix(relabeled, spec)
    np.testing.assert_allclose(
        factor.matrix, kernel_matrix(shift_trail, spec).matrix[np.ix_(order, order)], atol=1e-14
    )

    for b in range(0, rkhs_config.B, 5):
        weights = resample_weights(rkhs_config.seed, b, n)[order]
        top = np.linalg.eigvalsh(factor.root @ _dense_process(weights, loss) @ factor.root)[-1]
        assert result.replicates[b] == pytest.approx(max(top, 0.0), rel=1e-7, abs=1e-15)

    atoms = np.linspace(0, 1, 6)
    probabilities = np.full(6, 1 / 6)
    means = 0.5 * atoms
    original = population_sup_discrete(atoms, probabilities, means, shift_trail, spec, 0.1)
    shuffled = np.random.default_rng(9).permutation(6)
    swapped = population_sup_discrete(
        atoms[shuffled], probabilities[shuffled], means[shuffled], relabeled, spec, 0.1
    )
    assert swapped == pytest.approx(original, rel=1e-8, abs=1e-12)


def test_shift_disparity_hand_case():
    trail = AuditTrail([0.0, 1.0, 1.0], numeric={'x': [0.0, 0.5, 1.0]})
    query = ShiftQuery.from_values([1.0, 2.0, 1.0], 1.0)
    assert shift_disparity(trail, TargetSpec.fixed(0.0), query) == pytest.approx(0.75)
    assert shift_lower_bound(trail, TargetSpec.fixed(0.0), query, 0.0) == pytest.approx(0.75)


def test_indicator_shift_matches_group_disparity(shift_trail):
    member = shift_trail.column('x') > 0.5
    query = ShiftQuery.from_values(member.astype(float), 1.0)
    expected = shift_trail.loss[member].mean() - 0.1
    assert shift_disparity(shift_trail, TargetSpec.fixed(0.1), query) == pytest.approx(expected)


def test_population_sup_single_atom():
    loss = np.array([0.5, 1.5, 2.5])
    trail = AuditTrail(loss, numeric={'x': [0.3, 0.3, 0.3]})
    spec = KernelSpec('gaussian', 1.0)
    # the only anchor is 0.3, so the supremum is max(mean(L) - m, 0)
    assert population_sup_discrete([0.3], [1.0], [1.2], trail, spec, 0.0) == pytest.approx(0.3)
    assert population_sup_discrete([0.3], [1.0], [1.8], trail, spec, 0.0) == 0.0
