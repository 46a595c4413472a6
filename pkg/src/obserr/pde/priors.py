"""Matérn prior on the temporal source amplitude and the random initial condition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from ..gaussian import SpdMatrix, clip_psd, symmetrize
from . import fem

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def matern32(s, t, sigma, length):
    r = np.sqrt(3.0) * np.abs(np.asarray(s) - np.asarray(t)) / length
    return sigma**2 * (1.0 + r) * np.exp(-r)


@dataclass(frozen=True)
class MaternPrior:
    cov: SpdMatrix
    raw: np.ndarray  # quadrature matrix before any symmetrization
    raw_asymmetry: float  # ||raw - raw^T||_2 / ||raw||_2
    asymmetry: float  # same measure after the hat-mass similarity rescaling
    clip_magnitude: float


def matern_prior(times, sigma=80.0, length=0.17):
    """Projected Matérn-3/2 covariance ``int c(t_i, t') psi_j(t') dt'``.

    Integrals use two-point Gauss quadrature on each temporal element; the
    result is symmetrized and clipped to positive semidefinite.

    The raw matrix behaves like ``K W`` with ``W`` the hat-function masses,
    which are halved at the two end nodes, so it is visibly nonsymmetric there
    and its plain symmetric part is indefinite. We symmetrize
    ``W^{1/2} raw W^{-1/2}`` instead: it is similar to the raw matrix, so it has
    the same (positive) spectrum and is symmetric up to quadrature error.
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    left, right = times[:-1], times[1:]
    h = right - left
    # quadrature points and weights per element, shape (n-1, 2)
    pts = 0.5 * (left + right)[:, None] + 0.5 * h[:, None] * _GAUSS[None, :]
    wts = np.repeat(0.5 * h[:, None], 2, axis=1)
    # hat function values: psi_e (left node) and psi_{e+1} (right node) on element e
    hat_left = (right[:, None] - pts) / h[:, None]
    hat_right = (pts - left[:, None]) / h[:, None]
    kern = matern32(times[:, None, None], pts[None], sigma, length)  # (n, n-1, 2)
    raw = np.zeros((n, n))
    raw[:, :-1] += np.einsum("iep,ep->ie", kern, wts * hat_left)
    raw[:, 1:] += np.einsum("iep,ep->ie", kern, wts * hat_right)
    hat_mass = np.zeros(n)
    hat_mass[:-1] += 0.5 * h
    hat_mass[1:] += 0.5 * h
    root = np.sqrt(hat_mass)
    balanced = root[:, None] * raw / root[None, :]
    sym, clipped = clip_psd(symmetrize(balanced))
    return MaternPrior(SpdMatrix(sym), raw, _asym(raw), _asym(balanced), clipped)


def _asym(a):
    return float(np.linalg.norm(a - a.T, 2) / np.linalg.norm(a, 2))


class InitialConditionSampler:
    """Samples ``m_b + H^{-1} G xi`` with ``H = eps K + alpha M + beta M_boundary``
    and ``G G^T = M``, so the covariance is ``H^{-1} M H^{-1}``.
    """

    def __init__(self, mesh, eps=4.5e-3, alpha=0.22, beta=None, mean=50.0):
        if beta is None:
            beta = np.sqrt(eps * alpha)
        self.mean = float(mean)
        self.n = mesh.n_space
        h = (eps * fem.stiffness(mesh) + alpha * fem.mass(mesh) + beta * fem.boundary_mass(mesh)).tocsc()
        self._h = splu(h)
        self._mass_root = np.linalg.cholesky(fem.mass(mesh).toarray())

    def noise_map(self):
        """Dense ``H^{-1} G``; the covariance is this matrix times its transpose."""
        return self._h.solve(self._mass_root)

    def covariance(self):
        f = self.noise_map()
        return symmetrize(f @ f.T)

    def fluctuation(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self._h.solve(self._mass_root @ xi)

    def sample(self, seed, size=None):
        rng = np.random.default_rng(seed)
        if size is None:
            return self.mean + self.fluctuation(rng.standard_normal(self.n))
        xi = rng.standard_normal((self.n, size))
        return (self.mean + self.fluctuation(xi)).T


def sample_initial_condition(mesh, prior_cfg, seed=None):
    sampler = InitialConditionSampler(mesh, prior_cfg.ic_eps, prior_cfg.ic_alpha, prior_cfg.beta, prior_cfg.ic_mean)
    return sampler.sample(prior_cfg.ic_seed if seed is None else seed)
