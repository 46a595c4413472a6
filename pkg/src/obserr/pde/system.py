"""Space-time advection-diffusion system.

State vectors are time-major: entry ``k * n_space + i`` is node ``i`` at time
``t_k``. The block rows of the operator are

    row 0:   w_0                                   = b
    row k:   (M + dt (kappa K + C)) w_k - M w_{k-1} = dt * theta_k * f

with ``M`` the consistent mass, ``K`` the stiffness, ``C`` the advection matrix
and ``f`` the load of the spatial source (implicit Euler).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .sources import source_spatial


@dataclass(frozen=True)
class PdeCoefficients:
    kappa: float
    velocity: np.ndarray  # nodal (n_space, 2), max speed 1
    source_center: tuple = (0.5, 0.35)
    source_width: float = 0.05
    source_width_kind: str = "std"
    load_quadrature: str = "consistent"  # or "vertex"

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.load_quadrature not in ("consistent", "vertex"):
            raise ValueError("load_quadrature must be 'consistent' or 'vertex'")

    def global_peclet(self):
        return float(np.linalg.norm(self.velocity, axis=1).max() / (2 * self.kappa))


@dataclass
class SpaceTimeSystem:
    mesh: object
    coeffs: PdeCoefficients
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    advection: sp.csr_matrix
    lumped: np.ndarray
    load: np.ndarray  # spatial load vector f
    step_matrix: sp.csc_matrix  # M + dt (kappa K + C)
    _lu: object = field(repr=False, default=None)
    _operator: sp.csr_matrix | None = field(repr=False, default=None)
    _model: np.ndarray | None = field(repr=False, default=None)

    @property
    def n_space(self):
        return self.mesh.n_space

    @property
    def n_time(self):
        return self.mesh.n_time

    @property
    def size(self):
        return self.n_space * self.n_time

    def local_peclet(self):
        return float(np.linalg.norm(self.coeffs.velocity, axis=1).max() * self.mesh.diameter() / (2 * self.coeffs.kappa))

    @property
    def operator(self):
        """Sparse block lower-bidiagonal space-time matrix ``A``."""
        if self._operator is None:
            nd, nt = self.n_space, self.n_time
            diag = [sp.identity(nd, format="csr")] + [self.step_matrix] * (nt - 1)
            a = sp.block_diag(diag, format="csr")
            # eye(k=-1) leaves block row 0 empty: the initial-condition rows have no coupling
            lower = sp.kron(sp.eye(nt, k=-1), self.mass, format="csr")
            self._operator = (a - lower).tocsr()
        return self._operator

    def rhs(self, theta, b):
        """Right-hand side vector for amplitude coefficients ``theta`` and initial condition ``b``."""
        theta = np.asarray(theta, dtype=float)
        out = np.zeros((self.n_time, self.n_space))
        out[0] = b
        out[1:] = self.mesh.dt * theta[1:, None] * self.load[None, :]
        return out.ravel()

    def march(self, theta=None, b=None, columns=None):
        """Forward substitution through the time blocks.

        ``theta`` may be a vector (one solve) or a matrix with one column per
        right-hand side; ``b`` likewise. Returns the state vector(s) in
        time-major order.
        """
        nd, nt, dt = self.n_space, self.n_time, self.mesh.dt
        if theta is None and b is None:
            raise ValueError("need a source amplitude or an initial condition")
        single = (theta is None or np.ndim(theta) == 1) and (b is None or np.ndim(b) == 1)
        th = None if theta is None else np.atleast_2d(np.asarray(theta, dtype=float).T).T.reshape(nt, -1)
        bb = None if b is None else np.asarray(b, dtype=float).reshape(nd, -1)
        ncol = (th.shape[1] if th is not None else bb.shape[1])
        out = np.zeros((nt, nd, ncol))
        if bb is not None:
            out[0] = bb
        for k in range(1, nt):
            rhs = self.mass @ out[k - 1]
            if th is not None:
                rhs = rhs + dt * self.load[:, None] * th[k][None, :]
            out[k] = self._lu.solve(rhs)
        out = out.reshape(nt * nd, ncol)
        return out[:, 0] if single else out

    def solve(self, theta, b):
        return self.march(theta, b)

    @property
    def model_matrix(self):
        """Dense ``(n_space n_time) x n_time`` matrix with column j = response to ``psi_j``."""
        if self._model is None:
            m = self.march(theta=np.eye(self.n_time))
            m.setflags(write=False)
            self._model = m
        return self._model

    def model_error(self, b):
        """Homogeneous solution carrying initial condition ``b``."""
        return self.march(b=b)

    def homogeneous_operator(self):
        """Dense map from initial condition to the homogeneous space-time solution."""
        return self.march(b=np.eye(self.n_space))

    def residual(self, u, theta=None, b=None):
        rhs = self.rhs(np.zeros(self.n_time) if theta is None else theta, np.zeros(self.n_space) if b is None else b)
        return self.operator @ u - rhs

    def state_at(self, u, k):
        return np.asarray(u).reshape(self.n_time, self.n_space)[k]


def assemble_system(mesh, coeffs):
    """Assemble the P1 matrices and factor the constant time-step block once."""
    k = fem.stiffness(mesh)
    m = fem.mass(mesh)
    c = fem.advection(mesh, coeffs.velocity)
    lumped = fem.lumped_mass(mesh)
    nodal_source = source_spatial(mesh.nodes, coeffs.source_width, coeffs.source_center, coeffs.source_width_kind)
    # consistent: exact integral of the P1 interpolant against each hat; vertex: lumped quadrature
    load = m @ nodal_source if coeffs.load_quadrature == "consistent" else lumped * nodal_source
    step = (m + mesh.dt * (coeffs.kappa * k + c)).tocsc()
    try:
        lu = splu(step)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"time-step block is singular: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise np.linalg.LinAlgError("time-step block is singular")
    return SpaceTimeSystem(mesh, coeffs, k.tocsr(), m.tocsr(), c.tocsr(), lumped, load, step, lu)
