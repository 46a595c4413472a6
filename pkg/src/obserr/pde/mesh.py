"""Triangulated unit square crossed with a uniform time grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SpaceTimeMesh:
    nodes: np.ndarray  # (n_space, 2)
    triangles: np.ndarray  # (n_tri, 3), counter-clockwise
    times: np.ndarray  # (n_time,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        times = np.asarray(self.times, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (n, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3 or tris.min() < 0 or tris.max() >= len(nodes):
            raise ValueError("triangles must be (m, 3) indices into nodes")
        area = signed_areas(nodes, tris)
        if np.any(area <= 0):
            raise ValueError(f"{int(np.sum(area <= 0))} triangles are degenerate or clockwise")
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("temporal nodes must be strictly increasing")
        steps = np.diff(times)
        if np.max(np.abs(steps - steps.mean())) > 1e-12:
            raise ValueError("temporal grid must be uniform")
        for arr in (nodes, tris, times):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "times", times)

    @property
    def n_space(self):
        return len(self.nodes)

    @property
    def n_time(self):
        return len(self.times)

    @property
    def dt(self):
        return float((self.times[-1] - self.times[0]) / (self.n_time - 1))

    def diameter(self):
        """Largest triangle edge length."""
        p = self.nodes[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return float(np.max(np.linalg.norm(edges, axis=2)))

    def boundary_edges(self):
        """Edges owned by a single triangle, as an (m, 2) index array."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        uniq, counts = np.unique(key, axis=0, return_counts=True)
        return uniq[counts == 1]

    def boundary_nodes(self):
        return np.unique(self.boundary_edges())

    def time_index(self, t, atol=1e-9):
        """Index of the temporal node equal to ``t``; raises if ``t`` is off-grid."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.rint((t - self.times[0]) / self.dt).astype(int)
        ok = (idx >= 0) & (idx < self.n_time)
        ok[ok] &= np.abs(self.times[idx[ok]] - t[ok]) <= atol
        if not ok.all():
            raise ValueError(f"times not on the temporal grid: {t[~ok]}")
        return idx

    def locate(self, points, tol=1e-10):
        """Containing triangle and barycentric weights for each point.

        Returns (tri_index, weights) with weights of shape (m, 3).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.nodes[self.triangles]
        base = p[:, 0]
        mats = np.stack([p[:, 1] - base, p[:, 2] - base], axis=2)  # (n_tri, 2, 2)
        inv = np.linalg.inv(mats)
        tri_out = np.empty(len(points), dtype=np.int64)
        w_out = np.empty((len(points), 3))
        for k, x in enumerate(points):
            lam12 = np.einsum("tij,tj->ti", inv, x - base)
            lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
            inside = np.all(lam >= -tol, axis=1)
            if not inside.any():
                raise ValueError(f"point {tuple(x)} lies outside the mesh")
            t = int(np.argmax(inside))
            w = np.clip(lam[t], 0.0, None)
            tri_out[k] = t
            w_out[k] = w / w.sum()
        return tri_out, w_out


def signed_areas(nodes, triangles):
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def structured_square(nodes_per_axis):
    if nodes_per_axis < 2:
        raise ValueError("need at least 2 nodes per axis")
    n = nodes_per_axis
    g = np.linspace(0.0, 1.0, n)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    a = (j * n + i).ravel()
    b, c, d = a + 1, a + n + 1, a + n
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return nodes, tris


def build_mesh(nodes_per_axis=11, time_elements=100, t_end=1.0):
    """Structured triangulation of the unit square and a uniform time grid."""
    if time_elements < 1:
        raise ValueError("need at least one time element")
    nodes, tris = structured_square(nodes_per_axis)
    times = np.linspace(0.0, t_end, time_elements + 1)
    return SpaceTimeMesh(nodes, tris, times)


def save_mesh_csv(mesh, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y"])
        for k, (x, y) in enumerate(mesh.nodes):
            w.writerow([k, repr(float(x)), repr(float(y))])
    with open(directory / "triangles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tri_id", "n0", "n1", "n2"])
        for k, t in enumerate(mesh.triangles):
            w.writerow([k, *map(int, t)])
    return directory / "nodes.csv", directory / "triangles.csv"


def _read_rows(path, header):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows[0] != header:
        raise ValueError(f"{path}: expected header {header}, got {rows[0]}")
    return rows[1:]


def load_mesh_csv(nodes_path, triangles_path, time_elements=100, t_end=1.0):
    node_rows = _read_rows(nodes_path, ["node_id", "x", "y"])
    tri_rows = _read_rows(triangles_path, ["tri_id", "n0", "n1", "n2"])
    nodes = np.zeros((len(node_rows), 2))
    for r in node_rows:
        nodes[int(r[0])] = float(r[1]), float(r[2])
    tris = np.zeros((len(tri_rows), 3), dtype=np.int64)
    for r in tri_rows:
        tris[int(r[0])] = int(r[1]), int(r[2]), int(r[3])
    # accept either orientation on import
    flip = signed_areas(nodes, tris) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return SpaceTimeMesh(nodes, tris, np.linspace(0.0, t_end, time_elements + 1))


def load_velocity_csv(path, n_nodes):
    rows = _read_rows(path, ["node_id", "vx", "vy"])
    vel = np.full((n_nodes, 2), np.nan)
    for r in rows:
        vel[int(r[0])] = float(r[1]), float(r[2])
    if np.isnan(vel).any():
        raise ValueError(f"{path}: velocity missing for some nodes")
    return vel
