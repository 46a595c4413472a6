"""Observation operators on the space-time testbed, data synthesis and posterior diagnostics.

Observation rows are ordered time-major: row ``k * n_sensors + s`` is
sensor ``s`` at the ``k``-th observation time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .gaussian import GaussianMeasure, SpdMatrix, gain_matrix, gaussian_condition, pseudoinverse
from .misfits import EnhancedNoiseSpec

KINDS = ("basic", "pde")
SIGNAL_FLOOR_RTOL = 1e-10


@dataclass(frozen=True)
class SensorLayout:
    points: np.ndarray  # (n_sensors, 2)
    times: np.ndarray  # (n_times,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        ts = np.atleast_1d(np.asarray(self.times, dtype=float))
        if pts.shape[1] != 2:
            raise ValueError("sensor points must be (x, y) pairs")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "times", ts)

    @property
    def n_obs(self):
        return len(self.points) * len(self.times)

    @classmethod
    def default(cls):
        pts = [(0.2 * m, 0.2 * n) for m in (1, 2) for n in (1, 2, 3, 4)]
        times = [round(0.1 + 0.01 * k, 12) for k in range(81)]
        return cls(np.array(pts), np.array(times))


@dataclass(frozen=True)
class ObservationOperator:
    kind: str
    interpolation: sp.csr_matrix  # n_obs x state size
    matrix: sp.csr_matrix  # interpolation (basic) or interpolation @ A (pde)
    time_indices: np.ndarray  # temporal node index of each observation time
    layout: SensorLayout

    @property
    def n_obs(self):
        return self.matrix.shape[0]

    def apply(self, u):
        return self.matrix @ u

    def observation_index_set(self):
        return np.unique(self.time_indices)


def interpolation_matrix(layout, mesh):
    """Barycentric interpolation in space, exact node selection in time."""
    tri, w = mesh.locate(layout.points)
    kt = mesh.time_index(layout.times)
    ns, nd = len(layout.points), mesh.n_space
    rows, cols, vals = [], [], []
    for a, k in enumerate(kt):
        for s in range(ns):
            r = a * ns + s
            for v, node in zip(w[s], mesh.triangles[tri[s]]):
                if v > 0:
                    rows.append(r)
                    cols.append(k * nd + node)
                    vals.append(v)
    shape = (len(kt) * ns, mesh.n_space * mesh.n_time)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape), kt


def build_observation(kind, layout, system):
    if kind not in KINDS:
        raise ValueError(f"observation kind must be one of {KINDS}")
    interp, kt = interpolation_matrix(layout, system.mesh)
    mat = interp if kind == "basic" else (interp @ system.operator).tocsr()
    return ObservationOperator(kind, interp, mat, np.repeat(kt, len(layout.points)), layout)


@dataclass(frozen=True)
class SyntheticData:
    y: np.ndarray
    signal: np.ndarray
    noise_realization: np.ndarray
    sigma_noise: float
    snr_scale: float
    seed: int

    def noise_cov(self):
        return SpdMatrix.identity(self.y.size, self.sigma_noise**2)


def synthesize_data(operator, truth_state, snr_scale, seed, zero_noise=False):
    """``y = O u + sigma xi`` with ``sigma = snr_scale * median |O u|``."""
    signal = operator.apply(truth_state)
    median = float(np.median(np.abs(signal)))
    # the pde operator leaves solver round-off where the source has no support
    if median <= SIGNAL_FLOOR_RTOL * np.abs(truth_state).max():
        raise ValueError(f"median observed signal is zero up to round-off ({median:.3e}); "
                         "the noise level would vanish")
    sigma = snr_scale * median
    xi = np.random.default_rng(seed).standard_normal(signal.size)
    noise = np.zeros_like(signal) if zero_noise else sigma * xi
    return SyntheticData(signal + noise, signal, noise, sigma, snr_scale, seed)


@dataclass(frozen=True)
class PosteriorPair:
    approx: GaussianMeasure
    best: GaussianMeasure
    forward: np.ndarray  # O M
    observed_error: np.ndarray  # O delta


def compute_posteriors(forward, observed_error, prior, noise_cov, data):
    """Approximate (no shift) and best (shift ``O delta``) posteriors sharing one covariance."""
    approx = gaussian_condition(prior, forward, noise_cov, None, data)
    best = gaussian_condition(prior, forward, noise_cov, observed_error, data)
    # same code path gives bit-identical covariances; reuse one object to make that explicit
    best = GaussianMeasure(best.mean, approx.cov)
    return PosteriorPair(approx, best, forward, observed_error)


def mean_gap_reference(forward, observed_error, prior_cov, noise_cov):
    """``(O M S)^T (O M S (O M)^T + N)^{-1} O delta`` by a direct solve."""
    return gain_matrix(prior_cov, forward, noise_cov) @ observed_error


def projection_diagnostic(forward, v, index_set=None, tol=1e-12):
    """Apply ``(OM)^+ (OM)`` to ``v`` and compare against ``v`` on the index set.

    Returns (projected, report) where the report holds the largest relative
    mismatch on the index set and the largest projected magnitude off it,
    both relative to ``||v||_inf``.
    """
    v = np.asarray(v, dtype=float)
    projected = pseudoinverse(forward, tol) @ (forward @ v)
    report = {}
    if index_set is not None:
        on = np.zeros(v.size, dtype=bool)
        on[np.asarray(index_set)] = True
        scale = max(np.abs(v).max(), np.finfo(float).tiny)
        report = {
            "on_index_max_rel_error": float(np.abs(projected[on] - v[on]).max() / scale) if on.any() else 0.0,
            "off_index_max_rel": float(np.abs(projected[~on]).max() / scale) if (~on).any() else 0.0,
            "n_index": int(on.sum()),
        }
    return projected, report


def small_noise_study(forward, observed_error, prior, truth, signal, index_set, noise_scales):
    """Best-posterior mean error on the index set for a zero noise realization.

    For each scale the noise standard deviation is ``scale * median |signal|``
    and the data are the exact signal.
    """
    median = float(np.median(np.abs(signal)))
    idx = np.asarray(index_set)
    rows = []
    for scale in noise_scales:
        sigma = scale * median
        post = gaussian_condition(prior, forward, SpdMatrix.identity(signal.size, sigma**2), observed_error, signal)
        err = np.linalg.norm(post.mean[idx] - truth[idx]) / np.linalg.norm(truth[idx]) if idx.size else np.nan
        rows.append({"scale": float(scale), "sigma": sigma, "relative_error": float(err)})
    return rows


def enhanced_noise_model(operator, system, sampler, cov_scale=1.0):
    """Enhanced-noise model derived from the initial-condition prior.

    The state error is the homogeneous solution from a random initial
    condition, so ``m_eps = T m_b`` and ``Sigma_eps = T Sigma_b T^T`` with
    ``T`` the homogeneous solution map; only the observed pieces are formed.
    """
    nd = system.n_space
    mean_state = system.model_error(np.full(nd, sampler.mean))
    obs_t = operator.matrix @ system.homogeneous_operator()  # n_obs x n_space
    root = obs_t @ sampler.noise_map()
    cov = cov_scale * (root @ root.T)
    return EnhancedNoiseSpec(operator.apply(mean_state), 0.5 * (cov + cov.T)), root * np.sqrt(cov_scale)


@dataclass(frozen=True)
class JointProblem:
    basis: np.ndarray  # state size x J
    obs_basis: np.ndarray  # n_obs x J
    coeff_prior: GaussianMeasure | None
    snapshot_ics: np.ndarray  # J x n_space


def build_joint_problem(system, operator, sampler, basis_size, coeff_std, seed, include_ic=None):
    """Error basis from normalized homogeneous solutions of random initial conditions."""
    if basis_size == 0:
        return JointProblem(np.zeros((system.size, 0)), np.zeros((operator.n_obs, 0)), None,
                            np.zeros((0, system.n_space)))
    ics = np.atleast_2d(sampler.sample(seed, size=basis_size))
    if include_ic is not None:
        ics[0] = include_ic
    snaps = system.march(b=ics.T)
    rank = np.linalg.matrix_rank(snaps)
    if rank < basis_size:
        raise ValueError(f"error basis of size {basis_size} exceeds snapshot rank {rank}")
    basis = snaps / np.abs(snaps).max(axis=0)
    prior = GaussianMeasure(np.zeros(basis_size), SpdMatrix.identity(basis_size, coeff_std**2))
    return JointProblem(basis, np.asarray(operator.matrix @ basis), prior, ics)
