import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obserr.checks import conditioning_quadrature, gaussian_identity_checks, kl_quadrature
from obserr.gaussian import (GaussianMeasure, SpdMatrix, WeightedNormContext, clip_psd, enhanced_norm_constant,
                             gain_matrix, gaussian_condition, gaussian_kl, norm_equivalence_constants, pseudoinverse,
                             quadratic_difference_identity, symmetrize, weighted_norm_sq, woodbury_gap)


def gm(mean, cov):
    return GaussianMeasure(np.atleast_1d(np.asarray(mean, dtype=float)), SpdMatrix(np.atleast_2d(cov)))


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return symmetrize(a @ a.T + 0.1 * n * np.eye(n))


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=8)


# ---------------------------------------------------------------- SpdMatrix


def test_spd_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError):
        SpdMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="positive definite"):
        SpdMatrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


@given(seeds, dims)
@settings(max_examples=50, deadline=None)
def test_cholesky_reconstruction(seed, n):
    m = SpdMatrix(random_spd(np.random.default_rng(seed), n))
    assert m.reconstruction_error() <= 1e-10


def test_from_square_root_matches_gram(rng):
    root = rng.standard_normal((5, 7))
    m = SpdMatrix.from_square_root(root)
    np.testing.assert_allclose(m.entries, root @ root.T, rtol=1e-12, atol=1e-12)
    assert np.all(np.diag(m.factor) > 0)


def test_entries_are_read_only():
    m = SpdMatrix.identity(3)
    with pytest.raises((AttributeError, ValueError)):
        m.entries[0, 0] = 5.0


def test_clip_psd_tolerance():
    mat = np.diag([1.0, -1e-12])
    clipped, mag = clip_psd(mat)
    assert clipped[1, 1] == 0.0 and mag == pytest.approx(1e-12)
    with pytest.raises(ValueError):
        clip_psd(np.diag([1.0, -1e-3]))


# ---------------------------------------------------------------- norms and identities


def test_weighted_norm_examples():
    assert weighted_norm_sq(np.array([3.0, 4.0]), WeightedNormContext(weight=SpdMatrix.identity(2))) == 25.0
    assert weighted_norm_sq(np.zeros(2), WeightedNormContext(weight=SpdMatrix.identity(2))) == 0.0
    w = WeightedNormContext(weight=SpdMatrix(np.diag([4.0, 1.0])))
    assert weighted_norm_sq(np.array([1.0, 1.0]), w) == pytest.approx(5.0, rel=1e-15)


def test_weighted_norm_dimension_mismatch():
    with pytest.raises(ValueError):
        weighted_norm_sq(np.ones(3), WeightedNormContext(weight=SpdMatrix.identity(2)))


def test_inverse_weight_matches_explicit_inverse(rng):
    cov = random_spd(rng, 6)
    a = rng.standard_normal(6)
    via_factor = weighted_norm_sq(a, WeightedNormContext.from_covariance(SpdMatrix(cov)))
    assert via_factor == pytest.approx(a @ np.linalg.solve(cov, a), rel=1e-12)


def test_quadratic_identity_examples():
    lhs, rhs = quadratic_difference_identity(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.eye(2), np.zeros((2, 2)))
    assert lhs == pytest.approx(-1.0, abs=1e-15) and rhs == pytest.approx(-1.0, abs=1e-15)
    lhs, rhs = quadratic_difference_identity(np.array([0.3, -2.0]), np.zeros(2), np.eye(2), np.zeros((2, 2)))
    assert lhs == pytest.approx(0.0, abs=1e-15) and rhs == pytest.approx(0.0, abs=1e-15)


def test_quadratic_identity_rejects_non_psd():
    with pytest.raises(ValueError):
        quadratic_difference_identity(np.ones(2), np.ones(2), np.eye(2), np.diag([1.0, -1.0]))


@given(seeds, dims)
@settings(max_examples=100, deadline=None)
def test_quadratic_identity_property(seed, n):
    rng = np.random.default_rng(seed)
    root = rng.standard_normal((n, int(rng.integers(0, n + 1))))
    m1, m2 = random_spd(rng, n), root @ root.T
    a, b = rng.standard_normal(n), rng.standard_normal(n)
    lhs, rhs = quadratic_difference_identity(a, b, m1, m2)
    scale = max(abs(lhs), a @ np.linalg.solve(m1, a), 1.0)
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_woodbury_examples():
    np.testing.assert_array_equal(woodbury_gap(np.eye(3), np.zeros((3, 3))), np.zeros((3, 3)))
    assert woodbury_gap(np.array([[1.0]]), np.array([[1.0]]))[0, 0] == pytest.approx(0.5, rel=1e-15)


@given(seeds, dims)
@settings(max_examples=100, deadline=None)
def test_woodbury_gap_is_psd_and_matches_difference(seed, n):
    rng = np.random.default_rng(seed)
    m1 = random_spd(rng, n)
    root = rng.standard_normal((n, n))
    m2 = root @ root.T
    gap = woodbury_gap(m1, m2)
    np.testing.assert_allclose(gap, gap.T, atol=1e-14 * np.abs(gap).max() + 1e-300)
    assert np.linalg.eigvalsh(gap).min() >= -1e-10
    ref = np.linalg.inv(m1) - np.linalg.inv(m1 + m2)
    np.testing.assert_allclose(gap, ref, atol=1e-9 * np.abs(ref).max())


def test_enhanced_norm_constant_examples():
    assert enhanced_norm_constant(SpdMatrix.identity(2), np.zeros((2, 2))) == 1.0
    assert enhanced_norm_constant(SpdMatrix(np.array([[1.0]])), np.array([[3.0]])) == pytest.approx(2.0, rel=1e-15)


@given(seeds, dims)
@settings(max_examples=50, deadline=None)
def test_norm_sandwich(seed, n):
    rng = np.random.default_rng(seed)
    m1 = random_spd(rng, n)
    root = rng.standard_normal((n, int(rng.integers(0, n + 1)))) * 3
    m2 = root @ root.T
    c_lo, c_hi = norm_equivalence_constants(m1, m2)
    w1 = WeightedNormContext.from_covariance(SpdMatrix(m1))
    w12 = WeightedNormContext.from_covariance(SpdMatrix(symmetrize(m1 + m2)))
    z = rng.standard_normal((100, n))
    n1, n12 = np.sqrt(w1.norm_sq(z)), np.sqrt(w12.norm_sq(z))
    assert np.all(n1 <= c_hi * n12 * (1 + 1e-12))
    assert np.all(n12 / c_lo <= n1 * (1 + 1e-12))


def test_c_enh_is_attained():
    # the top eigenvector of the whitened term attains the constant
    cov = np.diag([1.0, 4.0])
    term = np.diag([8.0, 0.0])
    c = enhanced_norm_constant(SpdMatrix(cov), term)
    assert c == pytest.approx(3.0, rel=1e-14)
    z = np.array([1.0, 0.0])
    assert math.sqrt(z @ np.linalg.solve(cov, z)) == pytest.approx(c * math.sqrt(z @ np.linalg.solve(cov + term, z)))


# ---------------------------------------------------------------- conditioning


def test_scalar_conditioning_example():
    post = gaussian_condition(gm(0.0, 1.0), np.array([[1.0]]), SpdMatrix(np.array([[1.0]])), np.zeros(1),
                              np.array([2.0]))
    assert post.mean[0] == pytest.approx(1.0, rel=1e-15)
    assert post.cov.entries[0, 0] == pytest.approx(0.5, rel=1e-15)


def test_zero_forward_returns_prior(rng):
    prior = GaussianMeasure(rng.standard_normal(4), SpdMatrix(random_spd(rng, 4)))
    post = gaussian_condition(prior, np.zeros((3, 4)), SpdMatrix.identity(3), None, rng.standard_normal(3))
    np.testing.assert_allclose(post.mean, prior.mean, rtol=0, atol=1e-14)
    np.testing.assert_allclose(post.cov.entries, prior.cov.entries, rtol=1e-14)


def test_zero_innovation_keeps_mean(rng):
    prior = GaussianMeasure(rng.standard_normal(4), SpdMatrix(random_spd(rng, 4)))
    g = rng.standard_normal((6, 4))
    shift = rng.standard_normal(6)
    post = gaussian_condition(prior, g, SpdMatrix.identity(6, 0.3), shift, g @ prior.mean + shift)
    np.testing.assert_allclose(post.mean, prior.mean, atol=1e-12)


def test_shape_errors(rng):
    prior = gm(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        gaussian_condition(prior, np.ones((3, 3)), SpdMatrix.identity(3), None, np.ones(3))
    with pytest.raises(ValueError):
        gaussian_condition(prior, np.ones((3, 2)), SpdMatrix.identity(3), np.ones(2), np.ones(3))


@given(seeds, dims, dims)
@settings(max_examples=60, deadline=None)
def test_conditioning_matches_gain_formula(seed, d, n):
    rng = np.random.default_rng(seed)
    prior = GaussianMeasure(rng.standard_normal(d), SpdMatrix(random_spd(rng, d)))
    g = rng.standard_normal((n, d))
    noise = SpdMatrix(random_spd(rng, n))
    y, shift = rng.standard_normal(n), rng.standard_normal(n)
    post = gaussian_condition(prior, g, noise, shift, y)
    k = gain_matrix(prior.cov, g, noise)
    mean = prior.mean + k @ (y - g @ prior.mean - shift)
    cov = prior.cov.entries - k @ g @ prior.cov.entries
    np.testing.assert_allclose(post.mean, mean, atol=1e-9 * (1 + np.abs(mean).max()))
    np.testing.assert_allclose(post.cov.entries, cov, atol=1e-9 * np.abs(prior.cov.entries).max())


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_covariance_independent_of_data_and_shift(seed):
    rng = np.random.default_rng(seed)
    prior = GaussianMeasure(np.zeros(3), SpdMatrix(random_spd(rng, 3)))
    g = rng.standard_normal((5, 3))
    noise = SpdMatrix.identity(5, 0.5)
    a = gaussian_condition(prior, g, noise, None, rng.standard_normal(5))
    b = gaussian_condition(prior, g, noise, rng.standard_normal(5), rng.standard_normal(5))
    np.testing.assert_array_equal(a.cov.entries, b.cov.entries)


def test_tiny_noise_keeps_posterior_variance_positive(rng):
    prior = GaussianMeasure(np.zeros(5), SpdMatrix(random_spd(rng, 5)))
    g = rng.standard_normal((5, 5))
    post = gaussian_condition(prior, g, SpdMatrix.identity(5, 1e-24), None, rng.standard_normal(5))
    assert np.all(np.linalg.eigvalsh(post.cov.entries) > 0)


def test_conditioning_quadrature_oracle():
    assert conditioning_quadrature(n_instances=20) <= 1e-6


# ---------------------------------------------------------------- KL


def test_kl_examples():
    p = gm(0.0, 1.0)
    assert gaussian_kl(p, p) == 0.0
    assert gaussian_kl(p, gm(1.0, 1.0)) == pytest.approx(0.5, rel=1e-15)
    assert gaussian_kl(gm(0.0, 2.0), gm(0.0, 1.0)) == pytest.approx(0.5 * (2 - 1 - math.log(2)), rel=1e-14)
    assert gaussian_kl(gm(0.0, 2.0), gm(0.0, 1.0)) == pytest.approx(0.15343, abs=1e-5)


def test_kl_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_kl(gm(np.zeros(2), np.eye(2)), gm(0.0, 1.0))


@given(seeds, dims)
@settings(max_examples=60, deadline=None)
def test_kl_nonnegative_and_zero_on_diagonal(seed, n):
    rng = np.random.default_rng(seed)
    p = GaussianMeasure(rng.standard_normal(n), SpdMatrix(random_spd(rng, n)))
    q = GaussianMeasure(rng.standard_normal(n), SpdMatrix(random_spd(rng, n)))
    assert gaussian_kl(p, q) >= 0
    assert gaussian_kl(p, p) == 0.0


def test_kl_quadrature_oracle():
    assert kl_quadrature(n_instances=20) <= 1e-6


# ---------------------------------------------------------------- pseudoinverse


def test_pseudoinverse_examples(rng):
    np.testing.assert_array_equal(pseudoinverse(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(pseudoinverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    a = rng.standard_normal((6, 3))
    np.testing.assert_allclose(pseudoinverse(a) @ a, np.eye(3), atol=1e-10)


@given(seeds, dims, dims)
@settings(max_examples=40, deadline=None)
def test_penrose_identities(seed, m, n):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, min(m, n) + 1))
    a = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    p = pseudoinverse(a)
    scale = np.abs(a).max()
    assert np.abs(a @ p @ a - a).max() <= 1e-8 * scale
    assert np.abs(p @ a @ p - p).max() <= 1e-8 * np.abs(p).max()
    assert np.abs((a @ p).T - a @ p).max() <= 1e-8
    assert np.abs((p @ a).T - p @ a).max() <= 1e-8


def test_gaussian_identity_checks_helper():
    id_err, min_eig, sandwich = gaussian_identity_checks(n_instances=30)
    assert id_err <= 1e-10 and min_eig >= -1e-10 and sandwich <= 1 + 1e-12
