"""Misfit families, lifted misfits, finite-grid posteriors and the joint Gaussian posterior."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianMeasure, SpdMatrix, WeightedNormContext, gaussian_condition, symmetrize

FAMILIES = ("best", "approximate", "enhanced", "joint")
KL_INFINITY = float("inf")


@dataclass(frozen=True)
class EnhancedNoiseSpec:
    """Gaussian model of the state error, seen through the observation operator.

    ``obs_mean`` is ``O m_eps`` and ``cov_term`` is ``O Sigma_eps O^T``.
    """

    obs_mean: np.ndarray
    cov_term: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.obs_mean, dtype=float))
        cov = symmetrize(np.atleast_2d(self.cov_term))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("cov_term must be n x n with n = len(obs_mean)")
        evals = np.linalg.eigvalsh(cov)
        if evals.min() < -1e-10 * max(1.0, np.abs(evals).max()):
            raise ValueError("cov_term is not positive semidefinite")
        object.__setattr__(self, "obs_mean", mean)
        object.__setattr__(self, "cov_term", cov)


def _as_map(model):
    if callable(model):
        return model
    mat = np.atleast_2d(np.asarray(model, dtype=float))
    return lambda x: np.asarray(x, dtype=float) @ mat.T


@dataclass(frozen=True)
class MisfitSpec:
    """One misfit ``theta -> 1/2 |y - G(theta) - shift - E(error)|^2_W``.

    ``obs_model`` maps a parameter (or a batch of them, stacked along the
    first axis) to observation space. For the joint family ``error_map``
    sends the error argument to observation space (identity by default).
    """

    family: str
    data: np.ndarray
    obs_model: object
    weight: WeightedNormContext
    shift: Optional[np.ndarray] = None
    enhanced: Optional[EnhancedNoiseSpec] = None
    error_map: object = None
    lifted: bool = False
    _forward: Callable = field(init=False, repr=False, default=None)
    _error: Callable = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown misfit family {self.family!r}")
        data = np.atleast_1d(np.asarray(self.data, dtype=float))
        n = data.size
        shift = np.zeros(n) if self.shift is None else np.atleast_1d(np.asarray(self.shift, dtype=float))
        if self.weight.dim != n or shift.size != n:
            raise ValueError(f"weight dim {self.weight.dim}, data {n}, shift {shift.size} must agree")
        if self.family == "enhanced" and self.enhanced is None:
            raise ValueError("enhanced misfit needs an EnhancedNoiseSpec")
        if self.lifted and self.family == "joint":
            raise ValueError("joint misfit cannot be lifted")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "_forward", _as_map(self.obs_model))
        emap = (lambda e: np.asarray(e, dtype=float)) if self.error_map is None else _as_map(self.error_map)
        object.__setattr__(self, "_error", emap)

    @property
    def n_obs(self):
        return self.data.size

    def residual(self, theta, error=None):
        r = self.data - self._forward(theta) - self.shift
        if self.family == "joint":
            r = r - self._error(error)
        return r


def make_misfit(family, data, obs_model, noise_cov, shift=None, enhanced=None, error_map=None):
    """Build a misfit with the weight matching its family.

    For ``enhanced`` the weight is ``(noise_cov + cov_term)^{-1}`` and the
    shift defaults to ``enhanced.obs_mean``.
    """
    noise_cov = noise_cov if isinstance(noise_cov, SpdMatrix) else SpdMatrix(noise_cov)
    if family == "enhanced":
        if enhanced is None:
            raise ValueError("enhanced misfit needs an EnhancedNoiseSpec")
        cov = SpdMatrix(symmetrize(noise_cov.entries + enhanced.cov_term))
        shift = enhanced.obs_mean if shift is None else shift
        return MisfitSpec(family, data, obs_model, WeightedNormContext.from_covariance(cov), shift, enhanced)
    return MisfitSpec(family, data, obs_model, WeightedNormContext.from_covariance(noise_cov), shift,
                      error_map=error_map)


def misfit_eval(spec, theta, error=None):
    """Misfit value at ``theta`` (scalar) or at each row of a batch."""
    if spec.family == "joint":
        if error is None:
            raise ValueError("joint misfit needs an error argument")
    elif error is not None and not spec.lifted:
        raise ValueError(f"{spec.family} misfit takes no error argument; lift it first")
    r = spec.residual(theta, error)
    val = 0.5 * spec.weight.norm_sq(r)
    return float(val) if np.ndim(val) == 0 else val


def lift_misfit(spec):
    """Same misfit on the product space; the error argument is ignored."""
    if spec.family == "joint":
        raise ValueError("joint misfit cannot be lifted")
    return MisfitSpec(spec.family, spec.data, spec.obs_model, spec.weight, spec.shift, spec.enhanced,
                      spec.error_map, lifted=True)


@dataclass(frozen=True)
class FiniteGridModel:
    nodes: np.ndarray
    prior_weights: np.ndarray
    misfit_values: dict

    def __post_init__(self):
        w = np.asarray(self.prior_weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("need at least one grid node")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("prior weights must be nonnegative and sum to 1")
        vals = {}
        for key, v in self.misfit_values.items():
            v = np.asarray(v, dtype=float)
            if v.shape != w.shape or not np.all(np.isfinite(v)):
                raise ValueError(f"misfit {key!r} must be finite with one value per node")
            vals[key] = v
        object.__setattr__(self, "prior_weights", w)
        object.__setattr__(self, "misfit_values", vals)

    def l1_norm(self, key):
        return float(self.prior_weights @ np.abs(self.misfit_values[key]))

    def l1_distance(self, key1, key2):
        return float(self.prior_weights @ np.abs(self.misfit_values[key1] - self.misfit_values[key2]))

    def expectation(self, values):
        return float(self.prior_weights @ np.asarray(values, dtype=float))


def grid_posterior(grid, misfit_id):
    """Normalized ``prior * exp(-misfit)`` via log-sum-exp."""
    phi = grid.misfit_values[misfit_id]
    with np.errstate(divide="ignore"):
        logw = np.log(grid.prior_weights) - phi
    if not np.any(np.isfinite(logw)):
        raise ValueError("posterior normalization is zero")
    return np.exp(logw - logsumexp(logw))


def grid_kl(p, q):
    """``sum p log(p/q)``; returns ``KL_INFINITY`` when p is not dominated by q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have equal length")
    support = p > 0
    if np.any(q[support] <= 0):
        return KL_INFINITY
    return float(max(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))), 0.0))


@dataclass(frozen=True)
class JointParameter:
    theta: np.ndarray
    error_coeffs: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        c = np.atleast_1d(np.asarray(self.error_coeffs, dtype=float))
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(c))):
            raise ValueError("joint parameter must be finite")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "error_coeffs", c)

    def stacked(self):
        return np.concatenate([self.theta, self.error_coeffs])


def block_diag_measure(a, b):
    """Product of two independent Gaussians as one measure on the stacked space."""
    if b is None or b.dim == 0:
        return a
    d1, d2 = a.dim, b.dim
    cov = np.zeros((d1 + d2, d1 + d2))
    cov[:d1, :d1] = a.cov.entries
    cov[d1:, d1:] = b.cov.entries
    fac = np.zeros_like(cov)
    fac[:d1, :d1] = a.cov.factor
    fac[d1:, d1:] = b.cov.factor
    return GaussianMeasure(np.concatenate([a.mean, b.mean]), SpdMatrix(cov, factor=fac))


def joint_gaussian_posterior(prior_theta, prior_coeffs, obs_theta, obs_error, noise, data):
    """Posterior over stacked ``(theta, c)`` for data ``OM theta + O Psi c + noise``."""
    obs_theta = np.atleast_2d(np.asarray(obs_theta, dtype=float))
    n = obs_theta.shape[0]
    if prior_coeffs is None or prior_coeffs.dim == 0:
        return gaussian_condition(prior_theta, obs_theta, noise, np.zeros(n), data)
    obs_error = np.asarray(obs_error, dtype=float).reshape(n, -1)
    if obs_error.shape[1] != prior_coeffs.dim:
        raise ValueError(f"O Psi has {obs_error.shape[1]} columns but the coefficient prior has dim {prior_coeffs.dim}")
    prior = block_diag_measure(prior_theta, prior_coeffs)
    return gaussian_condition(prior, np.hstack([obs_theta, obs_error]), noise, np.zeros(n), data)
