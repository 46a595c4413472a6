import math

import numpy as np
import pytest

from obserr import bounds as bd
from obserr.gaussian import GaussianMeasure, SpdMatrix, WeightedNormContext, enhanced_norm_constant, symmetrize
from obserr.misfits import EnhancedNoiseSpec, FiniteGridModel, joint_gaussian_posterior, make_misfit, misfit_eval


def normal_sampler(rng, size):
    return rng.standard_normal(size)


# ---------------------------------------------------------------- Monte Carlo L1


def test_constant_integrand_has_zero_error():
    est = bd.estimate_l1(lambda x: np.full(x.shape[0], 3.5), normal_sampler, 1000, seed=1)
    assert est.value == 3.5 and est.std_error == 0.0 and est.n_samples == 1000


def test_second_moment_of_standard_normal():
    est = bd.estimate_l1(lambda x: x**2, normal_sampler, 100_000, seed=3)
    assert abs(est.value - 1.0) <= 3 * est.std_error
    assert est.std_error == pytest.approx(math.sqrt(2 / 100_000), rel=0.05)


def test_estimate_is_deterministic_per_seed():
    a = bd.estimate_l1(lambda x: np.abs(x), normal_sampler, 5000, seed=11)
    b = bd.estimate_l1(lambda x: np.abs(x), normal_sampler, 5000, seed=11)
    c = bd.estimate_l1(lambda x: np.abs(x), normal_sampler, 5000, seed=12)
    assert a == b and a.value != c.value


def test_estimate_rejects_bad_input():
    with pytest.raises(ValueError):
        bd.estimate_l1(lambda x: x**2, normal_sampler, 1, seed=0)
    with pytest.raises(FloatingPointError, match="non-finite"):
        bd.estimate_l1(lambda x: np.where(x > 2, np.inf, x**2), normal_sampler, 5000, seed=0)
    with pytest.raises(ValueError):
        bd.estimate_l1(lambda x: x, normal_sampler, 100, seed=0)


def test_closed_form_weighted_square_matches_sampling(rng):
    w = WeightedNormContext.from_covariance(SpdMatrix(np.diag([1.0, 4.0])))
    offset, lin = np.array([1.0, -2.0]), rng.standard_normal((2, 3))
    cov = SpdMatrix(np.diag([0.5, 1.0, 2.0]))
    exact = bd.expected_weighted_sq(w, offset, lin, cov)
    est = bd.estimate_l1(lambda xi: w.norm_sq(offset + xi @ lin.T),
                         lambda r, s: r.standard_normal((s, 3)) * np.sqrt([0.5, 1.0, 2.0]), 50_000, seed=2)
    assert abs(est.value - exact) <= 4 * est.std_error


# ---------------------------------------------------------------- bound algebra


def test_plain_lemma_examples():
    assert bd.bound_misfit_diff_approx(2.0, 2.0, 2.0) == pytest.approx(2 * math.sqrt(2), rel=1e-15)
    assert bd.bound_misfit_diff_approx(2.0, 2.0, 0.0) == 0.0
    c, b = bd.bound_kl_approx_vs_best(1.0, 3.0, 0.0)
    assert b == 0.0 and c > 0
    c, b = bd.bound_kl_approx_vs_best(0.0, 0.0, 5.0)
    assert c == 0.0 and b == 0.0


def test_plain_constant_formula():
    c, b = bd.bound_kl_approx_vs_best(0.5, 0.25, 4.0)
    expected = math.sqrt(2) * math.exp(2 * 0.75) * (math.sqrt(0.5) + 0.5)
    assert c == pytest.approx(expected, rel=1e-14)
    assert b == pytest.approx(expected * 2.0, rel=1e-14)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        bd.plain_bound(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        bd.enhanced_bound(1.0, 1.0, 1.0, 1.0, -0.5)


def test_huge_norms_stay_in_log_space():
    b = bd.plain_bound(500.0, 500.0, 1.0)
    assert math.isinf(b.kl_bound) and b.log_kl_bound == pytest.approx(0.5 * math.log(2) + 2000 + math.log(2 * math.sqrt(500)))
    rep = bd.certify("approx-vs-best", {"best": 500.0, "approximate": 500.0}, {"observed": 1.0}, exact_kl=3.0)
    assert rep.log10_prop_bound > 800 and rep.holds


def test_enhanced_collapses_to_plain():
    for best, enh, drv in [(2.0, 2.0, 2.0), (0.3, 1.7, 0.05), (4.0, 0.0, 9.0)]:
        lemma, _, _ = bd.bound_kl_enhanced(best, enh, 1.0, drv, 0.0)
        assert lemma == pytest.approx(bd.bound_misfit_diff_approx(best, enh, drv), rel=1e-15)


def test_enhanced_zero_drivers_give_zero_bound():
    lemma, c, b = bd.bound_kl_enhanced(1.0, 1.0, 2.0, 0.0, 0.0)
    assert lemma == 0.0 and b == 0.0 and c > 0
    assert bd.bound_kl_approx_vs_enhanced(1.0, 1.0, 2.0, 0.0, 0.0)[2] == 0.0


def test_approx_vs_enhanced_first_term():
    lemma, _, _ = bd.bound_kl_approx_vs_enhanced(0.81, 0.25, 1.5, 1.0, 0.0)
    assert lemma == pytest.approx((0.9 + 1.5 * 0.5) / math.sqrt(2), rel=1e-15)


def test_enhanced_constant_has_unit_floor():
    b = bd.enhanced_bound(1e-4, 1e-4, 1.0, 1.0, 0.0)
    assert b.constant == pytest.approx(math.exp(4e-4), rel=1e-14)


def test_joint_pair_entry_points():
    assert bd.bound_kl_joint("best-vs-joint", 1.0, 1.0, 0.0)[2] == 0.0
    lemma, _, _ = bd.bound_kl_joint("approx-vs-joint", 2.0, 2.0, 2.0)
    assert lemma == pytest.approx(2 * math.sqrt(2))
    with pytest.raises(ValueError):
        bd.bound_kl_joint("enhanced-vs-joint", 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        bd.bound_kl_joint("approx-vs-best", 1.0, 1.0, 1.0)


@pytest.mark.parametrize("pair", list(bd.PAIRS))
def test_bounds_monotone_in_drivers(pair):
    norms = {"best": 0.7, "approximate": 1.1, "enhanced": 0.9, "joint": 1.3}
    grid = np.linspace(0.0, 5.0, 41)
    key = {"plain": "observed"}.get(bd.PAIRS[pair][2], "om_eps" if pair == "approx-vs-enhanced" else "shifted")
    for varied in (key, "covgap") if bd.PAIRS[pair][2] == "enhanced" else (key,):
        vals = []
        for g in grid:
            drivers = {"observed": 1.0, "shifted": 1.0, "om_eps": 1.0, "covgap": 0.5, varied: g}
            b = bd.pair_bound(pair, norms, drivers, c_enh=1.8)
            vals.append((b.lemma, b.log_kl_bound))
        lemmas, logs = zip(*vals)
        assert all(np.diff(lemmas) >= 0) and all(np.diff(logs) >= 0)


@pytest.mark.parametrize("pair", list(bd.PAIRS))
def test_proposition_equals_stability_bound_of_lemma(pair):
    norms = {"best": 0.4, "approximate": 0.6, "enhanced": 0.5, "joint": 0.8}
    drivers = {"observed": 0.3, "shifted": 0.2, "om_eps": 0.4, "covgap": 0.1}
    rep = bd.certify(pair, norms, drivers, c_enh=1.3)
    assert rep.theorem_chain_ok


# ---------------------------------------------------------------- reports


def test_certify_flags_violation():
    rep = bd.certify("approx-vs-best", {"best": 0.1, "approximate": 0.1}, {"observed": 0.01}, exact_kl=10.0)
    assert rep.holds is False and rep.violation
    ok = bd.certify("approx-vs-best", {"best": 0.1, "approximate": 0.1}, {"observed": 0.01}, exact_kl=1e-6)
    assert ok.holds is True


def test_certify_zero_driver_zero_kl():
    rep = bd.certify("approx-vs-best", {"best": 3.0, "approximate": 3.0}, {"observed": 0.0}, exact_kl=0.0)
    assert rep.prop_bound == 0.0 and rep.holds and rep.theorem_chain_ok
    assert rep.to_dict()["log10_prop_bound"] is None


def test_certify_uses_max_of_directions():
    rep = bd.certify("approx-vs-best", {"best": 0.1, "approximate": 0.1}, {"observed": 0.01},
                     exact_kl=(1e-5, 2e-5))
    assert rep.exact_kl == 2e-5 and rep.exact_kl_directions == (1e-5, 2e-5)


def test_certify_is_deterministic():
    norms = {"best": bd.estimate_l1(lambda x: x**2, normal_sampler, 2000, seed=5),
             "approximate": bd.estimate_l1(lambda x: np.abs(x), normal_sampler, 2000, seed=6)}
    drivers = {"observed": bd.estimate_l1(lambda x: 0.1 * x**2, normal_sampler, 2000, seed=7)}
    a = bd.certify("approx-vs-best", norms, drivers, exact_kl=0.01).to_dict()
    b = bd.certify("approx-vs-best", norms, drivers, exact_kl=0.01).to_dict()
    assert a == b and a["propagated_se"] > 0


def test_certify_requires_c_enh_for_enhanced_pairs():
    with pytest.raises(ValueError):
        bd.certify("enhanced-vs-best", {"best": 1.0, "enhanced": 1.0}, {"shifted": 1.0, "covgap": 0.0})
    with pytest.raises(ValueError):
        bd.certify("nope", {}, {})


# ---------------------------------------------------------------- covariance-gap caps


def scalar_enhanced_grid(s, nodes):
    """Scalar model with unit noise, error covariance ``s`` and zero error mean."""
    noise = SpdMatrix.identity(1)
    enh = EnhancedNoiseSpec(np.zeros(1), np.array([[s]]))
    spec = make_misfit("enhanced", np.zeros(1), np.array([[1.0]]), noise, enhanced=enh)
    th = nodes.reshape(-1, 1)
    weights = np.full(nodes.size, 1.0 / nodes.size)
    grid = FiniteGridModel(nodes, weights, {"enhanced": misfit_eval(spec, th)})
    w_n = WeightedNormContext.from_covariance(noise)
    w_e = WeightedNormContext.from_covariance(SpdMatrix(np.array([[1.0 + s]])))
    r = -th
    covgap = grid.expectation(w_n.norm_sq(r) - w_e.norm_sq(r))
    return grid, covgap, enhanced_norm_constant(noise, enh.cov_term)


def test_published_covgap_cap_fails_beyond_c_enh_two():
    grid, covgap, c_enh = scalar_enhanced_grid(8.0, np.linspace(-2, 2, 9))
    assert c_enh == pytest.approx(3.0)
    norm_e = grid.l1_norm("enhanced")
    assert covgap > 2 * (c_enh + 1) * norm_e  # the quoted cap is violated
    assert covgap <= 2 * (c_enh**2 - 1) * norm_e * (1 + 1e-12)  # the squared-constant cap holds (tight)
    comp = bd.enhanced_bound(0.0, norm_e, c_enh, 0.0, covgap).companions
    assert comp["covgap_cap"] and not comp["covgap_cap_published"]


def test_published_covgap_cap_holds_for_small_c_enh():
    grid, covgap, c_enh = scalar_enhanced_grid(1.5, np.linspace(-2, 2, 9))
    comp = bd.enhanced_bound(0.0, grid.l1_norm("enhanced"), c_enh, 0.0, covgap).companions
    assert comp["covgap_cap"] and comp["covgap_cap_published"]


# ---------------------------------------------------------------- marginal chain rule


def test_chain_rule_arithmetic():
    assert bd.marginal_chain_rule(2.0, 0.5) == 1.5
    assert bd.marginal_chain_rule(1.0, 1.0 + 1e-14) == 0.0
    with pytest.raises(ValueError):
        bd.marginal_chain_rule(1.0, 2.0)


def random_joint(rng, p, j, n, zero_error_obs=False):
    a = rng.standard_normal((p, p))
    prior_t = GaussianMeasure(rng.standard_normal(p), SpdMatrix(symmetrize(a @ a.T + np.eye(p))))
    prior_c = GaussianMeasure(np.zeros(j), SpdMatrix.identity(j, 2.0))
    om = rng.standard_normal((n, p))
    ops = np.zeros((n, j)) if zero_error_obs else rng.standard_normal((n, j))
    y = rng.standard_normal(n) * 3
    noise = SpdMatrix.identity(n, 0.2)
    joint = joint_gaussian_posterior(prior_t, prior_c, om, ops, noise, y)
    bullet = GaussianMeasure(rng.standard_normal(p), SpdMatrix(symmetrize(a @ a.T * 0.3 + 0.5 * np.eye(p))))
    return joint, bullet, prior_c


@pytest.mark.parametrize("j", [1, 4, 8])
def test_chain_rule_matches_direct_marginal(rng, j):
    for _ in range(10):
        joint, bullet, prior_c = random_joint(rng, 3, j, 12)
        out = bd.marginal_decomposition(joint, bullet, prior_c)
        assert abs(out["marginal_kl"] - out["chain_rule_kl"]) <= 1e-8 * max(out["marginal_kl"], 1e-300)
        assert out["marginal_kl"] <= out["joint_kl"] * (1 + 1e-12)


def test_chain_rule_with_unobserved_error(rng):
    joint, bullet, prior_c = random_joint(rng, 3, 4, 12, zero_error_obs=True)
    out = bd.marginal_decomposition(joint, bullet, prior_c)
    assert out["expected_conditional_kl"] == pytest.approx(0.0, abs=1e-10)
    assert out["marginal_kl"] == pytest.approx(out["joint_kl"], rel=1e-10)
