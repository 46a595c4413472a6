"""Invariant checks shared by the selftest command and the test suite."""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .gaussian import (GaussianMeasure, SpdMatrix, WeightedNormContext, gaussian_condition, gaussian_kl,
                       norm_equivalence_constants, quadratic_difference_identity, symmetrize, woodbury_gap,
                       weighted_norm_sq)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


def _random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return symmetrize(a @ a.T + 0.1 * n * np.eye(n))


def _random_psd(rng, n):
    r = int(rng.integers(0, n + 1))
    root = rng.standard_normal((n, r)) * 10 ** rng.uniform(-1, 1)
    return symmetrize(root @ root.T) if r else np.zeros((n, n))


def gaussian_identity_checks(n_instances=100, seed=0, max_dim=8):
    """Quadratic-difference identity, Woodbury-gap PSD and the norm sandwich on random instances.

    Returns ``(identity_max_rel, woodbury_min_eig, sandwich_worst)`` where
    ``sandwich_worst`` is the largest ratio of either side of the sandwich to
    its bound (at most 1 when it holds).
    """
    rng = np.random.default_rng(seed)
    worst_id, min_eig, worst_sw = 0.0, math.inf, 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, max_dim + 1))
        m1, m2 = _random_spd(rng, n), _random_psd(rng, n)
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        lhs, rhs = quadratic_difference_identity(a, b, m1, m2)
        scale = max(abs(lhs), a @ np.linalg.solve(m1, a), 1e-300)
        worst_id = max(worst_id, abs(lhs - rhs) / scale)
        gap = woodbury_gap(m1, m2)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(symmetrize(gap)).min()))
        c_lo, c_hi = norm_equivalence_constants(m1, m2)
        z = rng.standard_normal(n)
        n1 = math.sqrt(weighted_norm_sq(z, WeightedNormContext.from_covariance(SpdMatrix(m1))))
        n12 = math.sqrt(weighted_norm_sq(z, WeightedNormContext.from_covariance(SpdMatrix(symmetrize(m1 + m2)))))
        worst_sw = max(worst_sw, n1 / (c_hi * n12), (n12 / c_lo) / n1)
    return worst_id, min_eig, worst_sw


def _normal_pdf(x, mean, var):
    return math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def conditioning_quadrature(n_instances=20, seed=1):
    """Largest absolute mean / variance mismatch of 1-D conditioning against quadrature."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m, s2 = rng.normal(0, 2), rng.uniform(0.2, 3.0)
        g, shift, n2 = rng.normal(0, 1.5), rng.normal(0, 0.5), rng.uniform(0.1, 2.0)
        y = g * rng.normal(m, math.sqrt(s2)) + shift + rng.normal(0, math.sqrt(n2))
        post = gaussian_condition(GaussianMeasure(np.array([m]), SpdMatrix(np.array([[s2]]))),
                                  np.array([[g]]), SpdMatrix(np.array([[n2]])), np.array([shift]), np.array([y]))

        def dens(x):
            return _normal_pdf(x, m, s2) * math.exp(-0.5 * (y - g * x - shift) ** 2 / n2)

        lo, hi = m - 12 * math.sqrt(s2), m + 12 * math.sqrt(s2)
        z = integrate.quad(dens, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        mean = integrate.quad(lambda x: x * dens(x), lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0] / z
        var = integrate.quad(lambda x: (x - mean) ** 2 * dens(x), lo, hi, epsabs=1e-13, epsrel=1e-12,
                             limit=200)[0] / z
        worst = max(worst, abs(mean - post.mean[0]), abs(var - post.cov.entries[0, 0]))
    return worst


def kl_quadrature(n_instances=20, seed=2):
    """Largest absolute mismatch of the closed-form 1-D KL against quadrature of ``p log(p/q)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m1, m2 = rng.normal(0, 1, 2)
        v1, v2 = rng.uniform(0.3, 2.0, 2)
        p = GaussianMeasure(np.array([m1]), SpdMatrix(np.array([[v1]])))
        q = GaussianMeasure(np.array([m2]), SpdMatrix(np.array([[v2]])))

        def integrand(x):
            logp = -0.5 * (x - m1) ** 2 / v1 - 0.5 * math.log(2 * math.pi * v1)
            logq = -0.5 * (x - m2) ** 2 / v2 - 0.5 * math.log(2 * math.pi * v2)
            return math.exp(logp) * (logp - logq)

        half = 14 * math.sqrt(v1)
        ref = integrate.quad(integrand, m1 - half, m1 + half, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        worst = max(worst, abs(ref - gaussian_kl(p, q)))
    return worst


def homogeneous_residual(system, delta, b):
    """``max |A delta - rhs(0, b)| / ||b||_inf`` over all rows."""
    res = system.residual(delta, None, b)
    return float(np.abs(res).max() / max(np.abs(b).max(), np.finfo(float).tiny))


def run_selftest(perturb_operator=False, cfg=None):
    """Run the invariant checks; returns ``(results, seconds)``.

    ``perturb_operator`` adds a small entry to one time-stepping row of the
    space-time operator before the residual check (negative control).
    """
    from .config import ExperimentConfig
    from .experiment import build_testbed, setup_kind
    from .oracle import run_oracle_suite

    start = time.perf_counter()
    results = []
    id_err, min_eig, sandwich = gaussian_identity_checks()
    results.append(CheckResult("quadratic-difference identity", id_err <= 1e-10, id_err, 1e-10))
    results.append(CheckResult("woodbury gap psd", min_eig >= -1e-10, -min(min_eig, 0.0), 1e-10,
                               f"min eigenvalue {min_eig:.3e}"))
    results.append(CheckResult("norm equivalence sandwich", sandwich <= 1 + 1e-12, sandwich, 1 + 1e-12))
    cond = conditioning_quadrature()
    results.append(CheckResult("conditioning vs quadrature", cond <= 1e-6, cond, 1e-6))
    kl = kl_quadrature()
    results.append(CheckResult("gaussian kl vs quadrature", kl <= 1e-6, kl, 1e-6))

    tb = build_testbed(cfg or ExperimentConfig())
    system = tb.system
    if perturb_operator:
        op = system.operator.tolil()
        row = system.n_space + system.n_space // 2
        op[row, row] += 1e-3
        system._operator = op.tocsr()
    res = homogeneous_residual(system, tb.delta, tb.ic_true)
    results.append(CheckResult("space-time residual of the model error", res <= 1e-10, res, 1e-10))
    ks = setup_kind(tb, "pde")
    kernel = float(np.abs(ks.observed_error).max() / np.abs(tb.delta).max())
    results.append(CheckResult("pde operator annihilates the model error", kernel <= 1e-10, kernel, 1e-10))
    from .observation import projection_diagnostic
    _, rep = projection_diagnostic(ks.forward, tb.truth, ks.index_set)
    proj = rep["on_index_max_rel_error"]
    results.append(CheckResult("projection identity on the index set", proj <= 1e-8, proj, 1e-8))
    suite = run_oracle_suite(n_instances=25)
    n_fail = sum(len(v) for v in suite.failures().values())
    results.append(CheckResult("finite-grid oracle (25 per pair)", n_fail == 0, float(n_fail), 0.0))
    return results, time.perf_counter() - start


def summary_hash(results):
    """Hash of check names, outcomes and values at 6 significant digits."""
    doc = [[r.name, r.passed, f"{r.value:.6e}"] for r in results]
    return hashlib.sha256(json.dumps(doc).encode()).hexdigest()[:16]
