"""P1 finite element matrices on a triangle mesh and the default velocity field."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import signed_areas


def _gradients(mesh):
    """Barycentric gradients, shape (n_tri, 3, 2), and triangle areas."""
    p = mesh.nodes[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edges
    g12 = np.linalg.inv(jac)  # row r = grad lambda_{r+1}
    g0 = -g12.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g12], axis=1), signed_areas(mesh.nodes, mesh.triangles)


def _scatter(mesh, local, n=None):
    n = mesh.n_space if n is None else n
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness(mesh):
    grads, area = _gradients(mesh)
    local = area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    return _scatter(mesh, local)


_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass(mesh):
    area = signed_areas(mesh.nodes, mesh.triangles)
    return _scatter(mesh, area[:, None, None] * _LOCAL_MASS)


def lumped_mass(mesh):
    area = signed_areas(mesh.nodes, mesh.triangles)
    out = np.zeros(mesh.n_space)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    return out


def advection(mesh, velocity):
    """``C_ij = int phi_i (v_h . grad phi_j)`` with P1-interpolated nodal velocity."""
    grads, area = _gradients(mesh)
    v = np.asarray(velocity, dtype=float)[mesh.triangles]  # (n_tri, 3, 2)
    # int phi_i phi_k = area/12 (1 + delta_ik); weighted velocity seen by test function i
    vbar = np.einsum("ik,tkd->tid", _LOCAL_MASS, v) * area[:, None, None]
    local = np.einsum("tid,tjd->tij", vbar, grads)
    return _scatter(mesh, local)


def boundary_mass(mesh):
    edges = mesh.boundary_edges()
    p = mesh.nodes[edges]
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    local = length[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    n = mesh.n_space
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stream_velocity(x, y):
    """Curl of psi = sin^2(pi x) sin^2(pi y), unnormalized."""
    px, py = np.pi * x, np.pi * y
    dpsi_dx = np.pi * np.sin(2 * px) * np.sin(py) ** 2
    dpsi_dy = np.pi * np.sin(px) ** 2 * np.sin(2 * py)
    return np.stack([dpsi_dy, -dpsi_dx], axis=-1)


def stream_divergence(x, y):
    """Analytic divergence of :func:`stream_velocity` (identically zero)."""
    mixed = np.pi**2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return mixed - mixed


def default_velocity(mesh):
    """Divergence-free nodal velocity with unit maximum nodal speed."""
    v = stream_velocity(mesh.nodes[:, 0], mesh.nodes[:, 1])
    speed = np.linalg.norm(v, axis=1).max()
    if speed == 0:
        raise ValueError("mesh nodes see a zero velocity field; refine the mesh")
    return v / speed


def normalize_velocity(v):
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v, axis=1).max()
    if speed == 0:
        raise ValueError("velocity field is identically zero")
    return v / speed
