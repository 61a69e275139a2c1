"""Structured periodic simplicial meshes of the unit cell and its supercells.

The unit cell is Q = [-1/2, 1/2)^d with d in {1, 2}.  The supercell of
half-width N is Q_N = [-N-1/2, N+1/2)^d, a block of (2N+1)^d translated
copies of Q.  Meshes are uniform: intervals in 1D, squares split into two
triangles along the same diagonal in 2D.  Vertices on opposite faces are
identified, so all fields live on periodic degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["UnitMesh", "SuperMesh", "build_unit_mesh", "replicate", "mesh_to_dict"]


def _structured_core(dim: int, n: int, lo: float, h: float) -> dict:
    """Build the uniform periodic mesh core over [lo, lo + n*h]^dim.

    Returns a dict of arrays: vertices (with the duplicated far faces),
    simplices, the periodic DOF id of each vertex, per-simplex volumes,
    P1 basis gradients, barycenters, and lumped per-DOF volumes.
    """
    if dim == 1:
        verts = (lo + h * np.arange(n + 1))[:, None]
        cells = np.stack([np.arange(n), np.arange(n) + 1], axis=1)
        vertex_dof = np.arange(n + 1) % n
    elif dim == 2:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        verts = np.stack([lo + h * i.ravel(), lo + h * j.ravel()], axis=1)

        def vid(ii, jj):
            return ii * (n + 1) + jj

        si, sj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        si, sj = si.ravel(), sj.ravel()
        v00 = vid(si, sj)
        v10 = vid(si + 1, sj)
        v11 = vid(si + 1, sj + 1)
        v01 = vid(si, sj + 1)
        # squares split along the v00-v11 diagonal, lower triangle first
        cells = np.empty((2 * n * n, 3), dtype=np.int64)
        cells[0::2] = np.stack([v00, v10, v11], axis=1)
        cells[1::2] = np.stack([v00, v11, v01], axis=1)
        vertex_dof = ((i % n) * n + (j % n)).ravel()
    else:
        raise ValueError(f"dim must be 1 or 2, got {dim}")

    coords = verts[cells]  # (n_cells, dim+1, dim)
    edges = coords[:, 1:, :] - coords[:, :1, :]
    jac = np.transpose(edges, (0, 2, 1))  # columns are edge vectors
    if dim == 1:
        det = jac[:, 0, 0]
        jac_inv = 1.0 / jac
    else:
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        jac_inv = np.empty_like(jac)
        jac_inv[:, 0, 0] = jac[:, 1, 1] / det
        jac_inv[:, 1, 1] = jac[:, 0, 0] / det
        jac_inv[:, 0, 1] = -jac[:, 0, 1] / det
        jac_inv[:, 1, 0] = -jac[:, 1, 0] / det
    volumes = np.abs(det) / math.factorial(dim)

    grads_ref = np.vstack([-np.ones((1, dim)), np.eye(dim)])  # (dim+1, dim)
    grads = np.einsum("tji,aj->tai", jac_inv, grads_ref)
    barycenters = coords.mean(axis=1)

    n_dofs = n**dim
    cell_dofs = vertex_dof[cells]
    dof_volumes = np.zeros(n_dofs)
    np.add.at(dof_volumes, cell_dofs, (volumes / (dim + 1))[:, None])

    return {
        "vertices": verts,
        "cells": cells,
        "vertex_dof": vertex_dof,
        "cell_dofs": cell_dofs,
        "volumes": volumes,
        "grads": grads,
        "barycenters": barycenters,
        "dof_volumes": dof_volumes,
        "n_dofs": n_dofs,
    }


@dataclass(frozen=True)
class UnitMesh:
    """Uniform periodic P1 mesh of the unit cell Q = [-1/2, 1/2)^d."""

    dim: int
    subdivisions: int
    h: float
    vertices: np.ndarray  # (n_verts, dim), far faces duplicated
    cells: np.ndarray  # (n_cells, dim+1) vertex ids
    vertex_dof: np.ndarray  # (n_verts,) periodic DOF of each vertex
    cell_dofs: np.ndarray  # (n_cells, dim+1) periodic DOFs
    periodic_pairs: dict  # duplicated boundary vertex -> representative
    volumes: np.ndarray  # (n_cells,)
    grads: np.ndarray  # (n_cells, dim+1, dim) P1 basis gradients
    barycenters: np.ndarray  # (n_cells, dim)
    dof_volumes: np.ndarray  # (n_dofs,) lumped volumes
    n_dofs: int
    volume: float = 1.0

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]


@dataclass(frozen=True)
class SuperMesh:
    """Periodic mesh of Q_N obtained by replicating a unit-cell mesh.

    ``cell_lattice`` and ``cell_base`` tie every simplex to the lattice
    translate k in Z^d and the unit-cell simplex it copies; ``dof_base``
    maps every supercell DOF to the unit-cell DOF under Q-periodic wrap.
    Lattice indices come from integer index arithmetic, never from float
    coordinates.
    """

    base: UnitMesh
    N: int
    dim: int
    h: float
    vertices: np.ndarray
    cells: np.ndarray
    vertex_dof: np.ndarray
    cell_dofs: np.ndarray
    volumes: np.ndarray
    grads: np.ndarray
    barycenters: np.ndarray
    dof_volumes: np.ndarray
    n_dofs: int
    volume: float
    cell_lattice: np.ndarray = field(repr=False, default=None)  # (n_cells, dim)
    cell_base: np.ndarray = field(repr=False, default=None)  # (n_cells,)
    dof_base: np.ndarray = field(repr=False, default=None)  # (n_dofs,)

    @property
    def subdivisions(self) -> int:
        return self.base.subdivisions

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]


def build_unit_mesh(dim: int, subdivisions: int) -> UnitMesh:
    """Mesh Q = [-1/2, 1/2)^d uniformly with ``subdivisions`` intervals per axis.

    Parameters
    ----------
    dim : 1 or 2
    subdivisions : int
        Intervals per axis; the mesh has subdivisions**dim periodic DOFs
        and (dim!) * subdivisions**dim simplices.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    s = int(subdivisions)
    if s < 1:
        raise ValueError(f"subdivisions must be >= 1, got {subdivisions}")
    core = _structured_core(dim, s, -0.5, 1.0 / s)

    pairs = {}
    if dim == 1:
        reps = np.arange(s + 1) % s
        for v in range(s + 1):
            if reps[v] != v:
                pairs[v] = int(reps[v])
    else:
        i, j = np.meshgrid(np.arange(s + 1), np.arange(s + 1), indexing="ij")
        rep = (i % s) * (s + 1) + (j % s)
        flat = rep.ravel()
        for v in range(flat.size):
            if flat[v] != v:
                pairs[v] = int(flat[v])

    return UnitMesh(
        dim=dim,
        subdivisions=s,
        h=1.0 / s,
        vertices=core["vertices"],
        cells=core["cells"],
        vertex_dof=core["vertex_dof"],
        cell_dofs=core["cell_dofs"],
        periodic_pairs=pairs,
        volumes=core["volumes"],
        grads=core["grads"],
        barycenters=core["barycenters"],
        dof_volumes=core["dof_volumes"],
        n_dofs=core["n_dofs"],
    )


def replicate(base: UnitMesh, N: int) -> SuperMesh:
    """Tile ``base`` into the supercell Q_N = [-N-1/2, N+1/2)^d.

    The result carries, per simplex, the lattice translate k (infinity norm
    at most N) and the index of the unit-cell simplex it copies, and per
    DOF the wrapped unit-cell DOF.
    """
    N = int(N)
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    s = base.subdivisions
    d = base.dim
    m = 2 * N + 1
    n = m * s
    core = _structured_core(d, n, -(m / 2.0), base.h)

    if d == 1:
        elem = np.arange(n)
        cell_lattice = (elem // s - N)[:, None]
        cell_base = elem % s
        dof_base = np.arange(n) % s
    else:
        si, sj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        si, sj = si.ravel(), sj.ravel()
        k = np.stack([si // s - N, sj // s - N], axis=1)
        base_square = (si % s) * s + (sj % s)
        cell_lattice = np.repeat(k, 2, axis=0)
        cell_base = np.empty(2 * n * n, dtype=np.int64)
        cell_base[0::2] = 2 * base_square
        cell_base[1::2] = 2 * base_square + 1
        di, dj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        dof_base = ((di % s) * s + (dj % s)).ravel()

    return SuperMesh(
        base=base,
        N=N,
        dim=d,
        h=base.h,
        vertices=core["vertices"],
        cells=core["cells"],
        vertex_dof=core["vertex_dof"],
        cell_dofs=core["cell_dofs"],
        volumes=core["volumes"],
        grads=core["grads"],
        barycenters=core["barycenters"],
        dof_volumes=core["dof_volumes"],
        n_dofs=core["n_dofs"],
        volume=float(m**d),
        cell_lattice=cell_lattice,
        cell_base=cell_base,
        dof_base=dof_base,
    )


def mesh_to_dict(mesh) -> dict:
    """JSON-ready dump of vertices, simplices, and the periodic DOF map."""
    out = {
        "dim": mesh.dim,
        "subdivisions": int(mesh.subdivisions),
        "h": mesh.h,
        "n_dofs": int(mesh.n_dofs),
        "volume": mesh.volume,
        "vertices": mesh.vertices.tolist(),
        "cells": mesh.cells.tolist(),
        "vertex_dof": mesh.vertex_dof.tolist(),
    }
    if isinstance(mesh, SuperMesh):
        out["N"] = mesh.N
        out["cell_lattice"] = mesh.cell_lattice.tolist()
        out["cell_base"] = mesh.cell_base.tolist()
    return out
