"""Finite-grid oracle: exact enumeration checks of the misfit and KL bounds.

Every instance puts a discrete prior on at most ``max_nodes`` parameter nodes
(and, for joint pairs, on at most ``max_nodes`` observed-error vectors), so the
L1 norms, the misfit differences and both KL divergences are finite sums.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import bounds as bd
from .gaussian import SpdMatrix, WeightedNormContext, enhanced_norm_constant, symmetrize
from .misfits import (EnhancedNoiseSpec, FiniteGridModel, grid_kl, grid_posterior, lift_misfit, make_misfit,
                      misfit_eval)

REL_SLACK = 1e-10


@dataclass(frozen=True)
class GridInstance:
    theta_nodes: np.ndarray  # (K, p)
    theta_weights: np.ndarray  # (K,)
    error_nodes: np.ndarray  # (J, n) observed-error vectors for the joint family
    error_weights: np.ndarray  # (J,)
    forward: np.ndarray  # (n, p)
    data: np.ndarray
    noise_cov: np.ndarray
    observed_error: np.ndarray
    enh_mean: np.ndarray
    enh_cov: np.ndarray


def _spd(rng, n, scale):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return symmetrize((q * (scale * rng.uniform(0.3, 2.0, n))) @ q.T)


def _weights(rng, k):
    w = rng.dirichlet(np.ones(k))
    return w / w.sum()


def random_instance(rng, max_dim=8, max_nodes=20):
    """Random small instance; scales are log-uniform so some bounds are tight and some loose."""
    n = int(rng.integers(1, max_dim + 1))
    p = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(1, max_nodes + 1))
    j = int(rng.integers(1, max_nodes + 1))
    scale = 10 ** rng.uniform(-1.5, 0.5)
    noise = _spd(rng, n, 1.0)
    forward = rng.standard_normal((n, p)) * scale / math.sqrt(p)
    nodes = rng.standard_normal((k, p))
    data = rng.standard_normal(n) * scale
    err_scale = 10 ** rng.uniform(-2, 0) * (0.0 if rng.random() < 0.05 else 1.0)
    observed = rng.standard_normal(n) * err_scale
    enh_mean = observed + rng.standard_normal(n) * err_scale * rng.uniform(0, 1)
    rank = int(rng.integers(0, n + 1))
    root = rng.standard_normal((n, rank)) * 10 ** rng.uniform(-2, 0.5)
    enh_cov = symmetrize(root @ root.T) if rank else np.zeros((n, n))
    err_nodes = observed + rng.standard_normal((j, n)) * err_scale
    return GridInstance(nodes, _weights(rng, k), err_nodes, _weights(rng, j), forward, data, noise, observed,
                        enh_mean, enh_cov)


def _misfit_values(inst):
    noise = SpdMatrix(inst.noise_cov)
    enh = EnhancedNoiseSpec(inst.enh_mean, inst.enh_cov)
    specs = {
        "approximate": make_misfit("approximate", inst.data, inst.forward, noise),
        "best": make_misfit("best", inst.data, inst.forward, noise, shift=inst.observed_error),
        "enhanced": make_misfit("enhanced", inst.data, inst.forward, noise, enhanced=enh),
    }
    k, j = len(inst.theta_weights), len(inst.error_weights)
    theta_vals = {name: misfit_eval(spec, inst.theta_nodes) for name, spec in specs.items()}
    # product grid, theta-major: node (a, b) sits at a * j + b
    th = np.repeat(inst.theta_nodes, j, axis=0)
    err = np.tile(inst.error_nodes, (k, 1))
    joint = make_misfit("joint", inst.data, inst.forward, noise)
    prod_vals = {name: misfit_eval(lift_misfit(spec), th, err) for name, spec in specs.items()}
    prod_vals["joint"] = misfit_eval(joint, th, err)
    theta_grid = FiniteGridModel(inst.theta_nodes, inst.theta_weights, theta_vals)
    prod_w = np.outer(inst.theta_weights, inst.error_weights).ravel()
    prod_grid = FiniteGridModel(np.arange(k * j), prod_w / prod_w.sum(), prod_vals)
    return theta_grid, prod_grid, specs


def _drivers(inst, theta_grid):
    w_n = WeightedNormContext.from_covariance(SpdMatrix(inst.noise_cov))
    w_e = WeightedNormContext.from_covariance(SpdMatrix(symmetrize(inst.noise_cov + inst.enh_cov)))
    r = inst.data - inst.theta_nodes @ inst.forward.T - inst.enh_mean
    covgap = theta_grid.expectation(np.maximum(w_n.norm_sq(r) - w_e.norm_sq(r), 0.0))
    ew = inst.error_weights
    return {
        "observed": float(w_n.norm_sq(inst.observed_error)),
        "shifted": float(w_n.norm_sq(inst.observed_error - inst.enh_mean)),
        "covgap": covgap,
        "om_eps": math.sqrt(float(w_n.norm_sq(inst.enh_mean))),
        "joint_best": float(ew @ w_n.norm_sq(inst.observed_error - inst.error_nodes)),
        "joint_approx": float(ew @ w_n.norm_sq(inst.error_nodes)),
        "joint_enhanced": float(ew @ w_n.norm_sq(inst.error_nodes - inst.enh_mean)),
    }


_DRIVER_KEYS = {
    "approx-vs-best": {"observed": "observed"},
    "enhanced-vs-best": {"shifted": "shifted", "covgap": "covgap"},
    "approx-vs-enhanced": {"om_eps": "om_eps", "covgap": "covgap"},
    "best-vs-joint": {"observed": "joint_best"},
    "approx-vs-joint": {"observed": "joint_approx"},
    "enhanced-vs-joint": {"shifted": "joint_enhanced", "covgap": "covgap"},
}


@dataclass
class InstanceCheck:
    pair: str
    l1_diff: float
    lemma_bound: float
    kl: float
    log_kl_bound: float
    log_theorem_bound: float
    lemma_ok: bool
    directed_ok: bool
    theorem_ok: bool
    kl_ok: bool
    chain_ok: bool
    covgap_cap_ok: bool
    published_cap_ok: bool

    @property
    def ok(self):
        return all((self.lemma_ok, self.directed_ok, self.theorem_ok, self.kl_ok, self.chain_ok,
                    self.covgap_cap_ok))


def _leq_log(value, log_bound):
    if value <= 0:
        return True
    return math.log(value) <= log_bound + REL_SLACK * max(1.0, abs(log_bound))


def check_instance(pair, inst):
    first, second, _ = bd.PAIRS[pair]
    theta_grid, prod_grid, _ = _misfit_values(inst)
    grid = prod_grid if second == "joint" else theta_grid
    norms = {name: grid.l1_norm(name) for name in (first, second)}
    d = _drivers(inst, theta_grid)
    drivers = {k: d[src] for k, src in _DRIVER_KEYS[pair].items()}
    c_enh = enhanced_norm_constant(SpdMatrix(inst.noise_cov), inst.enh_cov)
    p1, p2 = grid_posterior(grid, first), grid_posterior(grid, second)
    kl12, kl21 = grid_kl(p1, p2), grid_kl(p2, p1)
    kl = max(kl12, kl21)
    l1 = grid.l1_distance(first, second)
    directed = (_leq_log(kl12, bd.theorem_bound_directed_log(norms[first], l1))
                and _leq_log(kl21, bd.theorem_bound_directed_log(norms[second], l1)))
    rep = bd.certify(pair, norms, drivers, c_enh=c_enh, exact_kl=kl, exact_l1_diff=l1)
    b = bd.pair_bound(pair, norms, drivers, c_enh)
    log_thm = bd.theorem_bound_log(norms[first], norms[second], l1)
    return InstanceCheck(
        pair=pair,
        l1_diff=l1,
        lemma_bound=b.lemma,
        kl=kl,
        log_kl_bound=b.log_kl_bound,
        log_theorem_bound=log_thm,
        lemma_ok=l1 <= b.lemma * (1 + REL_SLACK) + 1e-14,
        directed_ok=directed,
        theorem_ok=_leq_log(kl, log_thm),
        kl_ok=_leq_log(kl, b.log_kl_bound),
        chain_ok=rep.theorem_chain_ok,
        covgap_cap_ok=b.companions.get("covgap_cap", True),
        published_cap_ok=b.companions.get("covgap_cap_published", True),
    )


@dataclass
class SuiteResult:
    checks: dict  # pair -> list[InstanceCheck]
    seconds: float

    def failures(self):
        return {p: [c for c in cs if not c.ok] for p, cs in self.checks.items() if any(not c.ok for c in cs)}

    @property
    def all_ok(self):
        return not self.failures()

    def summary(self):
        out = {}
        for pair, cs in self.checks.items():
            kl_ratio = [c.kl / math.exp(c.log_kl_bound) for c in cs
                        if c.kl > 0 and c.log_kl_bound < 700]
            out[pair] = {
                "instances": len(cs),
                "failures": sum(not c.ok for c in cs),
                "lemma_max_ratio": max((c.l1_diff / c.lemma_bound for c in cs if c.lemma_bound > 0), default=0.0),
                "kl_max_ratio": max(kl_ratio, default=0.0),
                "published_cap_violations": sum(not c.published_cap_ok for c in cs),
            }
        return out


def run_oracle_suite(n_instances=200, seed=0, pairs=tuple(bd.PAIRS), max_dim=8, max_nodes=20):
    """Check every pair on ``n_instances`` random instances; instance ``i`` of
    pair ``p`` uses ``default_rng([seed, index(p), i])``."""
    start = time.perf_counter()
    order = list(bd.PAIRS)
    checks = {}
    for pair in pairs:
        cs = []
        for i in range(n_instances):
            rng = np.random.default_rng([seed, order.index(pair), i])
            cs.append(check_instance(pair, random_instance(rng, max_dim, max_nodes)))
        checks[pair] = cs
    return SuiteResult(checks, time.perf_counter() - start)
