"""End-to-end testbed experiment: build, observe, condition, certify."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import bounds as bd
from .config import ExperimentConfig
from .gaussian import (GaussianMeasure, SpdMatrix, WeightedNormContext, enhanced_norm_constant,
                       gaussian_condition, gaussian_kl, symmetrize)
from .misfits import EnhancedNoiseSpec, block_diag_measure, joint_gaussian_posterior, make_misfit, misfit_eval
from .observation import (SensorLayout, build_joint_problem, build_observation, compute_posteriors,
                          enhanced_noise_model, mean_gap_reference, projection_diagnostic, small_noise_study,
                          synthesize_data)
from .pde.fem import default_velocity, normalize_velocity
from .pde.mesh import build_mesh, load_mesh_csv, load_velocity_csv
from .pde.priors import InitialConditionSampler, matern_prior
from .pde.sources import source_temporal_truth
from .pde.system import PdeCoefficients, assemble_system

CHOP_RTOL = 1e-10


def chop(values, scale, rtol=CHOP_RTOL):
    """Zero out entries at solver round-off level relative to ``scale``."""
    values = np.array(values, dtype=float, copy=True)
    values[np.abs(values) <= rtol * scale] = 0.0
    return values


@dataclass
class Testbed:
    config: ExperimentConfig
    mesh: object
    system: object
    prior: GaussianMeasure
    matern: object
    sampler: InitialConditionSampler
    ic_true: np.ndarray
    delta: np.ndarray  # model error state
    truth: np.ndarray  # nodal true amplitude
    truth_state: np.ndarray
    layout: SensorLayout


def build_testbed(cfg: ExperimentConfig):
    d, p, pde = cfg.discretization, cfg.prior, cfg.pde
    if d.mesh_nodes_file:
        mesh = load_mesh_csv(d.mesh_nodes_file, d.mesh_triangles_file, d.time_elements)
    else:
        mesh = build_mesh(d.nodes_per_axis, d.time_elements)
    if pde.velocity == "file":
        vel = normalize_velocity(load_velocity_csv(pde.velocity_file, mesh.n_space))
    else:
        vel = default_velocity(mesh)
    coeffs = PdeCoefficients(pde.kappa, vel, tuple(pde.source_center), pde.source_width, pde.source_width_kind,
                             pde.load_quadrature)
    system = assemble_system(mesh, coeffs)
    matern = matern_prior(mesh.times, p.matern_sigma, p.matern_length)
    prior = GaussianMeasure(np.full(mesh.n_time, p.theta_mean), matern.cov)
    sampler = InitialConditionSampler(mesh, p.ic_eps, p.ic_alpha, p.beta, p.ic_mean)
    ic_true = sampler.sample(p.ic_seed)
    delta = system.model_error(ic_true)
    truth = source_temporal_truth(mesh.times)
    truth_state = system.model_matrix @ truth + delta
    layout = SensorLayout(np.array(cfg.observation.sensors, dtype=float), np.array(cfg.observation.times, dtype=float))
    return Testbed(cfg, mesh, system, prior, matern, sampler, ic_true, delta, truth, truth_state, layout)


@dataclass
class KindSetup:
    kind: str
    operator: object
    forward: np.ndarray  # O M
    observed_error: np.ndarray  # O delta, raw
    observed_error_chopped: np.ndarray
    index_set: np.ndarray


def setup_kind(tb, kind):
    op = build_observation(kind, tb.layout, tb.system)
    forward = np.asarray(op.matrix @ tb.system.model_matrix)
    oe = op.apply(tb.delta)
    return KindSetup(kind, op, forward, oe, chop(oe, np.abs(tb.delta).max()), op.observation_index_set())


@dataclass
class CaseResult:
    kind: str
    snr: float
    data: object
    posteriors: object
    mean_gap: np.ndarray
    mean_gap_reference: np.ndarray
    projection: np.ndarray
    projection_report: dict


def run_case(tb, ks, snr, seed=None, zero_noise=None):
    cfg = tb.config.observation
    seed = cfg.noise_seed if seed is None else seed
    zero = cfg.zero_noise if zero_noise is None else zero_noise
    data = synthesize_data(ks.operator, tb.truth_state, snr, seed, zero)
    noise = data.noise_cov()
    post = compute_posteriors(ks.forward, ks.observed_error, tb.prior, noise, data.y)
    gap = post.approx.mean - post.best.mean
    ref = mean_gap_reference(ks.forward, ks.observed_error, tb.prior.cov, noise)
    proj, rep = projection_diagnostic(ks.forward, tb.truth, ks.index_set)
    return CaseResult(ks.kind, snr, data, post, gap, ref, proj, rep)


# ---------------------------------------------------------------- bounds on the testbed


@dataclass
class BoundContext:
    """Everything the six pair reports need, in observation space."""

    forward: np.ndarray
    data: np.ndarray
    noise: SpdMatrix
    prior: GaussianMeasure
    observed_error: np.ndarray
    enh_mean: np.ndarray
    enh_cov: np.ndarray
    obs_basis: np.ndarray
    coeff_prior: GaussianMeasure | None


def _closed_form_norms(ctx, weights):
    """Exact ``||Phi||_L1`` for every family and every driver of the six pairs."""
    w_n, w_e = weights
    r0 = ctx.data - ctx.forward @ ctx.prior.mean
    cov = ctx.prior.cov
    lin = -ctx.forward
    out = {
        "best": 0.5 * bd.expected_weighted_sq(w_n, r0 - ctx.observed_error, lin, cov),
        "approximate": 0.5 * bd.expected_weighted_sq(w_n, r0, lin, cov),
        "enhanced": 0.5 * bd.expected_weighted_sq(w_e, r0 - ctx.enh_mean, lin, cov),
    }
    gap = (bd.expected_weighted_sq(w_n, r0 - ctx.enh_mean, lin, cov)
           - bd.expected_weighted_sq(w_e, r0 - ctx.enh_mean, lin, cov))
    drivers = {
        "observed": float(w_n.norm_sq(ctx.observed_error)),
        "shifted": float(w_n.norm_sq(ctx.observed_error - ctx.enh_mean)),
        "covgap": max(gap, 0.0),
        "om_eps": math.sqrt(float(w_n.norm_sq(ctx.enh_mean))),
    }
    if ctx.coeff_prior is not None:
        ccov = ctx.coeff_prior.cov
        psi = -ctx.obs_basis
        stacked_lin = np.hstack([lin, psi])
        stacked_cov = block_diag_measure(ctx.prior, ctx.coeff_prior).cov
        out["joint"] = 0.5 * bd.expected_weighted_sq(w_n, r0, stacked_lin, stacked_cov)
        drivers["joint_best"] = bd.expected_weighted_sq(w_n, ctx.observed_error, psi, ccov)
        drivers["joint_approx"] = bd.expected_weighted_sq(w_n, np.zeros_like(r0), psi, ccov)
        drivers["joint_enhanced"] = bd.expected_weighted_sq(w_n, -ctx.enh_mean, psi, ccov)
    else:
        out["joint"] = out["approximate"]
        drivers["joint_best"] = drivers["observed"]
        drivers["joint_approx"] = 0.0
        drivers["joint_enhanced"] = float(w_n.norm_sq(ctx.enh_mean))
    return out, drivers


def _mc_norms(ctx, weights, n, seed):
    w_n, w_e = weights
    approx = make_misfit("approximate", ctx.data, ctx.forward, ctx.noise)
    best = make_misfit("best", ctx.data, ctx.forward, ctx.noise, shift=ctx.observed_error)
    enh = make_misfit("enhanced", ctx.data, ctx.forward, ctx.noise,
                      enhanced=EnhancedNoiseSpec(ctx.enh_mean, ctx.enh_cov))
    sample_theta = ctx.prior.sample
    est = {
        "best": bd.estimate_l1(lambda th: misfit_eval(best, th), sample_theta, n, seed),
        "approximate": bd.estimate_l1(lambda th: misfit_eval(approx, th), sample_theta, n, seed),
        "enhanced": bd.estimate_l1(lambda th: misfit_eval(enh, th), sample_theta, n, seed),
    }

    def covgap(th):
        r = ctx.data - th @ ctx.forward.T - ctx.enh_mean
        return np.maximum(w_n.norm_sq(r) - w_e.norm_sq(r), 0.0)

    drivers = {
        "observed": bd.L1Estimate.exact(float(w_n.norm_sq(ctx.observed_error))),
        "shifted": bd.L1Estimate.exact(float(w_n.norm_sq(ctx.observed_error - ctx.enh_mean))),
        "covgap": bd.estimate_l1(covgap, sample_theta, n, seed),
        "om_eps": bd.L1Estimate.exact(math.sqrt(float(w_n.norm_sq(ctx.enh_mean)))),
    }
    if ctx.coeff_prior is None:
        est["joint"] = est["approximate"]
        drivers["joint_best"] = drivers["observed"]
        drivers["joint_approx"] = bd.L1Estimate.exact(0.0)
        drivers["joint_enhanced"] = bd.L1Estimate.exact(float(w_n.norm_sq(ctx.enh_mean)))
        return est, drivers
    d = ctx.prior.dim
    stacked = block_diag_measure(ctx.prior, ctx.coeff_prior)
    joint = make_misfit("joint", ctx.data, ctx.forward, ctx.noise, error_map=ctx.obs_basis)

    def joint_phi(x):
        return misfit_eval(joint, x[:, :d], x[:, d:])

    def err_obs(x):
        return x[:, d:] @ ctx.obs_basis.T

    est["joint"] = bd.estimate_l1(joint_phi, stacked.sample, n, seed)
    drivers["joint_best"] = bd.estimate_l1(lambda x: w_n.norm_sq(ctx.observed_error - err_obs(x)), stacked.sample, n, seed)
    drivers["joint_approx"] = bd.estimate_l1(lambda x: w_n.norm_sq(err_obs(x)), stacked.sample, n, seed)
    drivers["joint_enhanced"] = bd.estimate_l1(lambda x: w_n.norm_sq(err_obs(x) - ctx.enh_mean), stacked.sample, n, seed)
    return est, drivers


_PAIR_DRIVERS = {
    "approx-vs-best": {"observed": "observed"},
    "enhanced-vs-best": {"shifted": "shifted", "covgap": "covgap"},
    "approx-vs-enhanced": {"om_eps": "om_eps", "covgap": "covgap"},
    "best-vs-joint": {"observed": "joint_best"},
    "approx-vs-joint": {"observed": "joint_approx"},
    "enhanced-vs-joint": {"shifted": "joint_enhanced", "covgap": "covgap"},
}


def bound_context(tb, ks, case, joint_problem, enh_spec):
    return BoundContext(
        forward=ks.forward,
        data=case.data.y,
        noise=case.data.noise_cov(),
        prior=tb.prior,
        observed_error=ks.observed_error_chopped,
        enh_mean=enh_spec.obs_mean,
        enh_cov=enh_spec.cov_term,
        obs_basis=joint_problem.obs_basis,
        coeff_prior=joint_problem.coeff_prior,
    )


def exact_posteriors(ctx, case):
    noise = ctx.noise
    approx, best = case.posteriors.approx, case.posteriors.best
    enh_noise = SpdMatrix(symmetrize(noise.entries + ctx.enh_cov))
    enhanced = gaussian_condition(ctx.prior, ctx.forward, enh_noise, ctx.enh_mean, ctx.data)
    out = {"approximate": approx, "best": best, "enhanced": enhanced}
    if ctx.coeff_prior is not None:
        out["joint"] = joint_gaussian_posterior(ctx.prior, ctx.coeff_prior, ctx.forward, ctx.obs_basis, noise, ctx.data)
    else:
        out["joint"] = approx
    return out


def _kl_pair(p, q):
    return gaussian_kl(p, q), gaussian_kl(q, p)


def certify_case(tb, ks, case, joint_problem, enh_spec, bounds_cfg):
    ctx = bound_context(tb, ks, case, joint_problem, enh_spec)
    w_n = WeightedNormContext.from_covariance(ctx.noise)
    w_e = WeightedNormContext.from_covariance(SpdMatrix(symmetrize(ctx.noise.entries + ctx.enh_cov)))
    c_enh = enhanced_norm_constant(ctx.noise, ctx.enh_cov)
    exact_norms, exact_drivers = _closed_form_norms(ctx, (w_n, w_e))
    mc_norms, mc_drivers = _mc_norms(ctx, (w_n, w_e), bounds_cfg.mc_samples, bounds_cfg.seed)
    posts = exact_posteriors(ctx, case)
    lifted = {k: block_diag_measure(posts[k], ctx.coeff_prior) for k in ("approximate", "best", "enhanced")}

    reports = []
    for pair in bounds_cfg.pairs:
        first, second, _ = bd.PAIRS[pair]
        keys = _PAIR_DRIVERS[pair]
        if bounds_cfg.exact_l1:
            norms = {k: bd.L1Estimate.exact(v) for k, v in exact_norms.items()}
            drivers = {k: bd.L1Estimate.exact(exact_drivers[src]) for k, src in keys.items()}
        else:
            norms = dict(mc_norms)
            drivers = {k: mc_drivers[src] for k, src in keys.items()}
        needed = {first, second}
        norms = {k: v for k, v in norms.items() if k in needed}
        if second == "joint":
            kl = _kl_pair(lifted[first], posts["joint"])
        else:
            kl = _kl_pair(posts[first], posts[second])
        rep = bd.certify(pair, norms, drivers, c_enh=c_enh, exact_kl=kl, kl_atol=bounds_cfg.kl_atol)
        rep.inputs["crosscheck"] = {
            "norms_exact": {k: exact_norms[k] for k in needed},
            "norms_mc": {k: mc_norms[k].to_dict() for k in needed},
            "drivers_exact": {k: exact_drivers[src] for k, src in keys.items()},
            "drivers_mc": {k: mc_drivers[src].to_dict() for k, src in keys.items()},
        }
        reports.append(rep)

    marginal = {}
    if ctx.coeff_prior is not None:
        for name in ("approximate", "best", "enhanced"):
            marginal[name] = bd.marginal_decomposition(posts["joint"], posts[name], ctx.coeff_prior)
    return reports, marginal, c_enh


def prepare_joint(tb, ks, include_truth=None):
    jc = tb.config.joint
    inc = tb.ic_true if (jc.include_truth if include_truth is None else include_truth) else None
    problem = build_joint_problem(tb.system, ks.operator, tb.sampler, jc.basis_size, jc.coeff_std, jc.seed, inc)
    # basis columns have unit max-norm, so round-off in O Psi is judged against 1
    return dataclasses.replace(problem, obs_basis=chop(problem.obs_basis, 1.0))


def prepare_enhanced(tb, ks):
    spec, _ = enhanced_noise_model(ks.operator, tb.system, tb.sampler, tb.config.bounds.enhanced_cov_scale)
    scale = np.abs(tb.delta).max()
    # the pde operator annihilates homogeneous solutions; drop round-off residue
    mean = chop(spec.obs_mean, scale)
    cov = spec.cov_term
    if not np.any(mean) and np.abs(cov).max() <= (CHOP_RTOL * scale) ** 2:
        cov = np.zeros_like(cov)
    return EnhancedNoiseSpec(mean, cov)


def with_overrides(cfg, **blocks):
    return dataclasses.replace(cfg, **blocks)
