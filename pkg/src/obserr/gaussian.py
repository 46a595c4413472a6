"""Finite-dimensional Gaussian algebra.

Matrix-weighted norms, SPD matrices with a cached Cholesky factor, Gaussian
measures, linear-Gaussian conditioning, the closed-form Gaussian KL
divergence and an SVD pseudoinverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-10
PINV_RTOL = 1e-12


def symmetrize(mat):
    mat = np.asarray(mat, dtype=float)
    return 0.5 * (mat + mat.T)


def clip_psd(mat, rtol=PSD_RTOL):
    """Symmetrize ``mat`` and clip slightly negative eigenvalues to zero.

    Eigenvalues below ``-rtol * ||mat||_2`` are treated as a genuine loss of
    semidefiniteness and raise ``ValueError``.

    Returns:
        (clipped, clip_magnitude) where clip_magnitude is the sum of the
        absolute values of the eigenvalues that were clipped.
    """
    sym = symmetrize(mat)
    evals, evecs = np.linalg.eigh(sym)
    scale = max(np.max(np.abs(evals)), np.finfo(float).tiny)
    if evals.min() < -rtol * scale:
        raise ValueError(
            f"matrix is not positive semidefinite: min eigenvalue {evals.min():.3e}"
            f" below tolerance {-rtol * scale:.3e}"
        )
    neg = evals < 0
    if not neg.any():
        return sym, 0.0
    clipped = np.where(neg, 0.0, evals)
    out = symmetrize((evecs * clipped) @ evecs.T)
    return out, float(np.abs(evals[neg]).sum())


def _positive_diagonal(tri):
    signs = np.sign(np.diag(tri))
    signs[signs == 0] = 1.0
    return tri * signs[:, None]


class SpdMatrix:
    """Symmetric positive definite matrix with its lower Cholesky factor.

    The factor is computed once at construction, so instances are immutable
    and safe to share between threads.
    """

    __slots__ = ("entries", "factor")

    def __init__(self, entries, factor=None):
        entries = np.atleast_2d(np.asarray(entries, dtype=float))
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"SpdMatrix needs a square matrix, got shape {entries.shape}")
        scale = max(np.max(np.abs(entries)), np.finfo(float).tiny)
        asym = np.max(np.abs(entries - entries.T))
        if asym > SYMMETRY_RTOL * scale:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        entries = symmetrize(entries)
        if factor is None:
            try:
                factor = np.linalg.cholesky(entries)
            except np.linalg.LinAlgError as exc:
                raise ValueError("matrix is not positive definite (Cholesky failed)") from exc
        factor = np.asarray(factor, dtype=float)
        if not np.all(np.diag(factor) > 0):
            raise ValueError("Cholesky factor has a non-positive pivot")
        entries.setflags(write=False)
        factor.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "factor", factor)

    def __setattr__(self, name, value):
        raise AttributeError("SpdMatrix is immutable")

    @classmethod
    def from_square_root(cls, root):
        """Build ``root @ root.T`` without forming the product first.

        A QR factorization of ``root.T`` yields the triangular factor directly,
        which keeps tiny eigenvalues accurate when the matrix is badly scaled.
        """
        root = np.atleast_2d(np.asarray(root, dtype=float))
        r = np.linalg.qr(root.T, mode="r")
        lower = _positive_diagonal(r).T
        return cls(symmetrize(lower @ lower.T), factor=lower)

    @classmethod
    def identity(cls, dim, scale=1.0):
        return cls(scale * np.eye(dim), factor=np.sqrt(scale) * np.eye(dim))

    @property
    def dim(self):
        return self.entries.shape[0]

    def solve(self, rhs):
        return sla.cho_solve((self.factor, True), rhs, check_finite=False)

    def inverse(self):
        return symmetrize(self.solve(np.eye(self.dim)))

    def whiten(self, rhs):
        """Return ``L^{-1} rhs`` for ``self = L L^T``."""
        return sla.solve_triangular(self.factor, rhs, lower=True, check_finite=False)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def reconstruction_error(self):
        """Relative error of ``factor @ factor.T`` against the stored entries."""
        rec = self.factor @ self.factor.T
        return float(np.max(np.abs(rec - self.entries)) / np.max(np.abs(self.entries)))


@dataclass(frozen=True)
class GaussianMeasure:
    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.shape != (self.cov.dim,):
            raise ValueError(
                f"mean has shape {mean.shape} but covariance has dimension {self.cov.dim}"
            )
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self):
        return self.cov.dim

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.cov.factor.T

    def marginal(self, index):
        index = np.asarray(index)
        sub = self.cov.entries[np.ix_(index, index)]
        return GaussianMeasure(self.mean[index], SpdMatrix(sub))


@dataclass(frozen=True)
class WeightedNormContext:
    """Weight matrix ``L`` of the norm ``|a|_L = (a^T L a)^{1/2}``.

    ``inverse_of`` stores a covariance ``S`` when the weight is ``S^{-1}``, in
    which case the norm is evaluated by whitening with the factor of ``S`` and
    the inverse is never formed.
    """

    weight: SpdMatrix | None = None
    inverse_of: SpdMatrix | None = None
    _dim: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        if (self.weight is None) == (self.inverse_of is None):
            raise ValueError("give exactly one of weight or inverse_of")
        src = self.weight if self.weight is not None else self.inverse_of
        object.__setattr__(self, "_dim", src.dim)

    @classmethod
    def from_covariance(cls, cov):
        return cls(inverse_of=cov)

    @property
    def dim(self):
        return self._dim

    def matrix(self):
        if self.weight is not None:
            return self.weight.entries
        return self.inverse_of.inverse()

    def norm_sq(self, a):
        """Squared weighted norm of a vector or of each row of a 2-D array."""
        a = np.asarray(a, dtype=float)
        if a.shape[-1] != self.dim:
            raise ValueError(f"vector length {a.shape[-1]} does not match weight dim {self.dim}")
        if self.weight is not None:
            root = a @ self.weight.factor  # rows of L^T a
        else:
            root = self.inverse_of.whiten(a.T).T
        return np.sum(root * root, axis=-1)


def weighted_norm_sq(a, w):
    """Return ``a^T L a`` for the weight ``L`` carried by ``w``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        raise ValueError("weighted_norm_sq expects a single vector")
    return float(w.norm_sq(a))


def _as_spd(m):
    return m if isinstance(m, SpdMatrix) else SpdMatrix(m)


def _check_psd(m, rtol=PSD_RTOL):
    m = symmetrize(m)
    evals = np.linalg.eigvalsh(m)
    if evals.size and evals.min() < -rtol * max(1.0, np.max(np.abs(evals))):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {evals.min():.3e})")
    return m


def quadratic_difference_identity(a, b, m1, m2):
    """Evaluate both sides of the quadratic-form difference identity.

    lhs = |a|^2_{M1^-1} - |a+b|^2_{(M1+M2)^-1}
    rhs = -<b, 2a+b>_{M1^-1} + |a+b|^2_{M1^-1 - (M1+M2)^-1}

    The right-hand side goes through :func:`woodbury_gap`, so the two values
    are computed along different routes.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m1 = _as_spd(m1)
    m2 = _check_psd(np.atleast_2d(m2))
    if not (a.shape == b.shape == (m1.dim,) and m2.shape == (m1.dim, m1.dim)):
        raise ValueError("dimension mismatch in quadratic_difference_identity")
    total = SpdMatrix(symmetrize(m1.entries + m2))
    lhs = float(a @ m1.solve(a) - (a + b) @ total.solve(a + b))
    gap = woodbury_gap(m1, m2)
    rhs = float(-(b @ m1.solve(2 * a + b)) + (a + b) @ gap @ (a + b))
    return lhs, rhs


def woodbury_gap(m1, m2):
    """Return ``M1^{-1} - (M1+M2)^{-1}`` for SPD ``M1`` and PSD ``M2``.

    Evaluated as ``M1^{-1} M2 (M1+M2)^{-1}`` so no two nearly equal inverses
    are subtracted; the result is symmetric positive semidefinite.
    """
    m1 = _as_spd(m1)
    m2 = _check_psd(np.atleast_2d(m2))
    total = SpdMatrix(symmetrize(m1.entries + m2))
    left = m1.solve(m2)  # M1^{-1} M2
    gap = total.solve(left.T).T  # M1^{-1} M2 (M1+M2)^{-1}
    return symmetrize(gap)


def norm_equivalence_constants(m1, m2):
    """Constants ``(c_lo, c_hi)`` with
    ``|z|_{(M1+M2)^-1} / c_lo <= |z|_{M1^-1} <= c_hi |z|_{(M1+M2)^-1}``.

    ``c_hi = ||M1^{-1/2}(M1+M2)^{1/2}||_op`` and
    ``c_lo = ||(M1+M2)^{-1/2} M1^{1/2}||_op``, both read off the spectrum of
    the congruent matrix ``I + L^{-1} M2 L^{-T}`` with ``M1 = L L^T``.
    """
    m1 = _as_spd(m1)
    m2 = _check_psd(np.atleast_2d(m2))
    white = m1.whiten(m1.whiten(m2).T)  # L^{-1} M2 L^{-T}
    evals = np.linalg.eigvalsh(symmetrize(white))
    evals = np.clip(evals, 0.0, None)
    c_hi = float(np.sqrt(1.0 + evals.max()))
    c_lo = float(1.0 / np.sqrt(1.0 + evals.min()))
    return c_lo, c_hi


def enhanced_norm_constant(sigma_noise, o_sigma_eps_o):
    """``||Sigma_n^{-1/2} (Sigma_n + O Sigma_eps O^T)^{1/2}||_op``."""
    return norm_equivalence_constants(sigma_noise, o_sigma_eps_o)[1]


def gaussian_condition(prior, forward, noise_cov, shift, data):
    """Condition ``prior`` on ``data = forward @ x + shift + noise``.

    Mathematically this is the usual gain formula
    ``m + (G S)^T (G S G^T + N)^{-1} (y - G m - shift)`` with covariance
    ``S - (G S)^T (G S G^T + N)^{-1} G S``. It is evaluated in whitened
    coordinates through an SVD of ``N^{-1/2} G L`` (``S = L L^T``), which
    keeps posterior variances accurate when the noise is many orders of
    magnitude below the prior spread.
    """
    forward = np.atleast_2d(np.asarray(forward, dtype=float))
    data = np.atleast_1d(np.asarray(data, dtype=float))
    shift = np.zeros_like(data) if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))
    noise_cov = _as_spd(noise_cov)
    n, d = forward.shape
    if d != prior.dim or data.shape != (n,) or shift.shape != (n,) or noise_cov.dim != n:
        raise ValueError(
            f"non-conforming shapes: forward {forward.shape}, prior dim {prior.dim},"
            f" data {data.shape}, shift {shift.shape}, noise dim {noise_cov.dim}"
        )
    root = prior.cov.factor
    white_fwd = noise_cov.whiten(forward @ root)
    u, s, vt = np.linalg.svd(white_fwd, full_matrices=True)
    r = s.size
    innovation = noise_cov.whiten(data - forward @ prior.mean - shift)
    coeff = (s / (1.0 + s * s)) * (u[:, :r].T @ innovation)
    mean = prior.mean + root @ (vt[:r].T @ coeff)
    shrink = np.ones(d)
    shrink[:r] = 1.0 / np.sqrt(1.0 + s * s)
    post_root = root @ (vt.T * shrink)
    return GaussianMeasure(mean, SpdMatrix.from_square_root(post_root))


def gain_matrix(prior_cov, forward, noise_cov):
    """Kalman gain ``(G S)^T (G S G^T + N)^{-1}`` by a direct solve."""
    s = prior_cov.entries if isinstance(prior_cov, SpdMatrix) else np.asarray(prior_cov)
    n_cov = noise_cov.entries if isinstance(noise_cov, SpdMatrix) else np.asarray(noise_cov)
    gs = forward @ s
    inner = symmetrize(gs @ forward.T + n_cov)
    return np.linalg.solve(inner, gs).T


def gaussian_kl(p, q):
    """KL divergence ``d_KL(p || q)`` between two Gaussian measures.

    The trace term is written as ``tr(S_q^{-1} (S_p - S_q))`` so that
    identical covariances contribute exactly zero.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    diff = p.cov.entries - q.cov.entries
    w = q.cov.whiten(q.cov.whiten(diff).T)
    trace_term = float(np.trace(w))
    dm = q.cov.whiten(q.mean - p.mean)
    maha = float(dm @ dm)
    kl = 0.5 * (trace_term + maha + q.cov.logdet() - p.cov.logdet())
    return max(kl, 0.0) if kl > -1e-12 * (1 + abs(trace_term) + maha) else kl


def pseudoinverse(mat, tol=PINV_RTOL):
    """Moore-Penrose pseudoinverse via SVD with relative cutoff ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return np.zeros(mat.shape[::-1])
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    cutoff = tol * (s[0] if s.size else 0.0)
    keep = s > cutoff
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T
