import numpy as np
import pytest

from obserr.experiment import chop, prepare_joint
from obserr.gaussian import GaussianMeasure, SpdMatrix, gaussian_condition
from obserr.misfits import joint_gaussian_posterior
from obserr.observation import (SensorLayout, build_joint_problem, build_observation, compute_posteriors,
                                projection_diagnostic, small_noise_study, synthesize_data)


def sensor_nodes(tb):
    tri, w = tb.mesh.locate(tb.layout.points)
    nodes = tb.mesh.triangles[tri, np.argmax(w, axis=1)]
    np.testing.assert_allclose(w.max(axis=1), 1.0)
    return nodes


# ---------------------------------------------------------------- operators


def test_layout_size(testbed, basic, pde):
    assert testbed.layout.n_obs == 648 == basic.operator.n_obs == pde.operator.n_obs
    assert SensorLayout.default().n_obs == 648
    with pytest.raises(ValueError):
        SensorLayout(np.zeros((2, 3)), np.array([0.1]))


def test_interpolation_rows_are_partitions_of_unity(basic):
    m = basic.operator.interpolation
    assert m.min() >= 0
    np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 1.0, rtol=1e-15)


def test_basic_observes_constants(testbed, basic):
    u = np.full(testbed.system.size, 7.25)
    np.testing.assert_allclose(basic.operator.apply(u), 7.25, rtol=1e-15)


def test_interpolation_inside_elements(testbed):
    layout = SensorLayout(np.array([[0.25, 0.33]]), np.array([0.5]))
    op = build_observation("basic", layout, testbed.system)
    x, y = testbed.mesh.nodes.T
    u = np.tile(3 * x - 2 * y + 1, testbed.mesh.n_time)
    assert op.apply(u)[0] == pytest.approx(3 * 0.25 - 2 * 0.33 + 1, rel=1e-14)


def test_outside_point_and_off_grid_time_rejected(testbed):
    with pytest.raises(ValueError):
        build_observation("basic", SensorLayout(np.array([[1.2, 0.5]]), np.array([0.5])), testbed.system)
    with pytest.raises(ValueError):
        build_observation("basic", SensorLayout(np.array([[0.2, 0.5]]), np.array([0.505])), testbed.system)
    with pytest.raises(ValueError):
        build_observation("other", testbed.layout, testbed.system)


def test_pde_operator_annihilates_model_error(testbed, pde):
    assert np.abs(pde.observed_error).max() <= 1e-10 * np.abs(testbed.delta).max()


def test_pde_operator_on_source_response_reads_load(testbed, pde, rng):
    v = rng.normal(60, 10, testbed.mesh.n_time)
    obs = pde.operator.apply(testbed.system.model_matrix @ v).reshape(len(testbed.layout.times), -1)
    kt = testbed.mesh.time_index(testbed.layout.times)
    expected = testbed.mesh.dt * v[kt][:, None] * testbed.system.load[sensor_nodes(testbed)][None, :]
    np.testing.assert_allclose(obs, expected, rtol=1e-10, atol=1e-12 * np.abs(expected).max())


def test_index_set(pde, testbed):
    idx = pde.index_set
    np.testing.assert_array_equal(idx, np.arange(10, 91))
    np.testing.assert_allclose(testbed.mesh.times[idx], testbed.layout.times)


# ---------------------------------------------------------------- data


def test_signal_statistics(cases):
    d = cases[("basic", 0.1)].data
    med = np.median(np.abs(d.signal))
    assert 40 <= med <= 75
    assert d.sigma_noise == pytest.approx(0.1 * med, rel=1e-15)
    np.testing.assert_array_equal(d.y, d.signal + d.noise_realization)


def test_data_deterministic_and_zero_noise(testbed, basic):
    a = synthesize_data(basic.operator, testbed.truth_state, 0.1, seed=3)
    b = synthesize_data(basic.operator, testbed.truth_state, 0.1, seed=3)
    np.testing.assert_array_equal(a.y, b.y)
    z = synthesize_data(basic.operator, testbed.truth_state, 0.1, seed=3, zero_noise=True)
    np.testing.assert_array_equal(z.y, basic.operator.apply(testbed.truth_state))


def test_zero_median_signal_rejected(testbed, basic):
    with pytest.raises(ValueError, match="median"):
        synthesize_data(basic.operator, np.zeros(testbed.system.size), 0.1, seed=0)


# ---------------------------------------------------------------- posteriors


def test_shared_covariance_is_bit_identical(cases):
    for case in cases.values():
        assert case.posteriors.approx.cov is case.posteriors.best.cov


def test_pde_means_agree(cases):
    for snr in (0.1, 0.02):
        post = cases[("pde", snr)].posteriors
        gap = np.linalg.norm(post.approx.mean - post.best.mean)
        assert gap <= 1e-8 * np.linalg.norm(post.best.mean)


def test_basic_mean_gap_identity(cases):
    for snr in (0.1, 0.02):
        case = cases[("basic", snr)]
        ref = case.mean_gap_reference
        assert np.linalg.norm(case.mean_gap - ref) <= 1e-10 * np.linalg.norm(ref)


def test_mean_gap_identity_by_explicit_inverse(testbed, basic, cases):
    case = cases[("basic", 0.1)]
    s = testbed.prior.cov.entries
    om = basic.forward
    n = case.data.noise_cov().entries
    ref = (om @ s).T @ np.linalg.solve(om @ s @ om.T + n, basic.observed_error)
    assert np.linalg.norm(case.mean_gap - ref) <= 1e-8 * np.linalg.norm(ref)


def test_zero_operator_returns_prior(rng):
    prior = GaussianMeasure(rng.standard_normal(5), SpdMatrix.identity(5, 2.0))
    post = compute_posteriors(np.zeros((3, 5)), np.ones(3), prior, SpdMatrix.identity(3), rng.standard_normal(3))
    for m in (post.approx, post.best):
        np.testing.assert_allclose(m.mean, prior.mean, atol=1e-14)
        np.testing.assert_allclose(m.cov.entries, prior.cov.entries, rtol=1e-14)


def test_snr_raises_gap_and_lowers_variance(cases, basic):
    w = basic.index_set
    lo, hi = cases[("basic", 0.1)], cases[("basic", 0.02)]
    assert np.linalg.norm(hi.mean_gap) > np.linalg.norm(lo.mean_gap)
    v_lo = np.diag(lo.posteriors.approx.cov.entries)[w]
    v_hi = np.diag(hi.posteriors.approx.cov.entries)[w]
    assert np.all(v_hi < v_lo)


# ---------------------------------------------------------------- projections


def test_projection_on_and_off_index(testbed, pde, cases):
    rep = cases[("pde", 0.1)].projection_report
    assert rep["on_index_max_rel_error"] <= 1e-6
    assert rep["n_index"] == 81
    off = np.zeros(testbed.mesh.n_time)
    off[:10] = testbed.truth[:10]
    off[91:] = testbed.truth[91:]
    proj, _ = projection_diagnostic(pde.forward, off, pde.index_set)
    assert np.abs(proj).max() <= 1e-6 * np.linalg.norm(off)


def test_projection_full_rank_is_identity(rng):
    a = rng.standard_normal((8, 4))
    v = rng.standard_normal(4)
    proj, _ = projection_diagnostic(a, v)
    np.testing.assert_allclose(proj, v, atol=1e-12)


# ---------------------------------------------------------------- small-noise study


def _small_noise(tb, ks, scales=(1e-2, 1e-4, 1e-6)):
    signal = ks.operator.apply(tb.truth_state)
    return [r["relative_error"] for r in
            small_noise_study(ks.forward, ks.observed_error, tb.prior, tb.truth, signal, ks.index_set, scales)]


def test_small_noise_pde_error_decreases(testbed, pde):
    errs = _small_noise(testbed, pde)
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-2


def test_small_noise_basic_plateaus_above_pde(testbed, basic, pde):
    eb, ep = _small_noise(testbed, basic), _small_noise(testbed, pde)
    assert all(b > p for b, p in zip(eb, ep))


def test_small_noise_without_observations_is_prior_error(testbed):
    # a single all-zero row carries no information about theta
    idx = np.arange(10, 91)
    rows = small_noise_study(np.zeros((1, testbed.mesh.n_time)), np.zeros(1), testbed.prior, testbed.truth,
                             np.ones(1), idx, (1e-2, 1e-4))
    prior_err = np.linalg.norm(testbed.prior.mean[idx] - testbed.truth[idx]) / np.linalg.norm(testbed.truth[idx])
    for r in rows:
        assert r["relative_error"] == pytest.approx(prior_err, rel=1e-12)


# ---------------------------------------------------------------- joint problem


def test_empty_basis_reduces_to_approximate(testbed, basic, cases):
    jp = build_joint_problem(testbed.system, basic.operator, testbed.sampler, 0, 50.0, seed=1)
    assert jp.coeff_prior is None and jp.obs_basis.shape == (648, 0)
    case = cases[("basic", 0.1)]
    noise = case.data.noise_cov()
    joint = joint_gaussian_posterior(testbed.prior, jp.coeff_prior, basic.forward, jp.obs_basis, noise, case.data.y)
    np.testing.assert_allclose(joint.mean, case.posteriors.approx.mean, rtol=1e-12)


def test_basis_exceeding_snapshot_rank_rejected(testbed, basic):
    with pytest.raises(ValueError, match="rank"):
        build_joint_problem(testbed.system, basic.operator, testbed.sampler, testbed.mesh.n_space + 1, 50.0, 1)


def test_pde_operator_does_not_see_error_basis(testbed, pde):
    jp = prepare_joint(testbed, pde)
    assert np.all(jp.obs_basis == 0)
    raw = build_joint_problem(testbed.system, pde.operator, testbed.sampler, 4, 50.0, seed=23)
    assert np.abs(raw.obs_basis).max() <= 1e-10
    np.testing.assert_array_equal(chop(raw.obs_basis, 1.0), 0.0)


def test_joint_with_truth_in_span_beats_approximate(testbed, basic):
    tb = testbed
    jp = build_joint_problem(tb.system, basic.operator, tb.sampler, 4, 50.0, seed=23, include_ic=tb.ic_true)
    signal = basic.operator.apply(tb.truth_state)
    sigma = 1e-6 * np.median(np.abs(signal))
    noise = SpdMatrix.identity(signal.size, sigma**2)
    joint = joint_gaussian_posterior(tb.prior, jp.coeff_prior, basic.forward, jp.obs_basis, noise, signal)
    approx = gaussian_condition(tb.prior, basic.forward, noise, None, signal)
    w = basic.index_set
    err_joint = np.linalg.norm(joint.mean[:tb.mesh.n_time][w] - tb.truth[w])
    err_approx = np.linalg.norm(approx.mean[w] - tb.truth[w])
    assert err_joint <= err_approx
