"""Periodic P1 finite elements on structured meshes.

Assembly uses one-point (barycenter) quadrature, which is exact for the
piecewise-constant-per-element coefficient fields produced by the sampling
pipeline.  All solves use a hand-rolled Jacobi-preconditioned conjugate
gradient so that results are bitwise reproducible for a fixed mesh,
coefficient field, and tolerance: no threading, no pivoting heuristics,
fixed iteration order.  The periodic problem is singular with kernel = the
constants; loads are mean-compatible fluxes and the solution is pinned by
removing its volume-weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from perthom.errors import CoercivityError, SolverError

__all__ = [
    "DofField",
    "StiffnessMatrix",
    "assemble_stiffness",
    "assemble_load",
    "assemble_flux_load",
    "solve_zero_mean",
    "element_gradients",
    "grad_l2_norm",
    "sym_eig_range",
]


@dataclass
class DofField:
    """Values on periodic DOFs plus the relative residual of the solve."""

    values: np.ndarray
    mesh: object
    residual: float = 0.0
    iterations: int = 0

    def volume_mean(self) -> float:
        return float(self.values @ self.mesh.dof_volumes) / self.mesh.volume


@dataclass
class StiffnessMatrix:
    """Sparse periodic stiffness matrix remembering the mesh it came from."""

    mat: sp.csr_matrix
    mesh: object


def sym_eig_range(coeff: np.ndarray) -> tuple[float, float]:
    """Min and max eigenvalue over a stack of symmetric 1x1 or 2x2 matrices."""
    d = coeff.shape[-1]
    if d == 1:
        vals = coeff[..., 0, 0]
        return float(vals.min()), float(vals.max())
    tr = coeff[..., 0, 0] + coeff[..., 1, 1]
    det = coeff[..., 0, 0] * coeff[..., 1, 1] - coeff[..., 0, 1] * coeff[..., 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    lo = 0.5 * (tr - disc)
    hi = 0.5 * (tr + disc)
    return float(lo.min()), float(hi.max())


def _check_coefficient(mesh, coeff: np.ndarray) -> None:
    d = mesh.dim
    if coeff.shape != (mesh.n_cells, d, d):
        raise ValueError(
            f"coefficient shape {coeff.shape} does not match mesh "
            f"({mesh.n_cells} cells, dim {d})"
        )
    if not np.isfinite(coeff).all():
        raise CoercivityError("coefficient field contains non-finite entries")
    lo, _ = sym_eig_range(coeff)
    if lo <= 0.0:
        raise CoercivityError(
            f"coefficient field loses coercivity: min eigenvalue {lo:.3e} <= 0"
        )


def assemble_stiffness(mesh, coeff: np.ndarray) -> StiffnessMatrix:
    """Assemble K[a, b] = sum_T |T| grad(phi_a) . C_T grad(phi_b).

    Parameters
    ----------
    coeff : (n_cells, d, d) array
        Coefficient matrix per element (barycenter value).  Must be finite
        with positive eigenvalues; violation raises CoercivityError.

    Element contributions are accumulated in ascending element order, so
    the assembled matrix is reproducible bit for bit.
    """
    _check_coefficient(mesh, coeff)
    g = mesh.grads
    ke = np.einsum("tad,tde,tbe->tab", g, coeff, g) * mesh.volumes[:, None, None]
    nb = mesh.dim + 1
    rows = np.repeat(mesh.cell_dofs, nb, axis=1).ravel()
    cols = np.tile(mesh.cell_dofs, (1, nb)).ravel()
    mat = sp.coo_matrix(
        (ke.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)
    ).tocsr()
    return StiffnessMatrix(mat=mat, mesh=mesh)


def assemble_flux_load(mesh, flux: np.ndarray) -> np.ndarray:
    """Load b[a] = sum_T |T| F_T . grad(phi_a) for a per-element flux F.

    Any per-element flux yields a mean-compatible load because the basis
    gradients of each periodic hat integrate to zero over Q_N.
    """
    if flux.shape != (mesh.n_cells, mesh.dim):
        raise ValueError(f"flux shape {flux.shape} does not match mesh")
    be = np.einsum("td,tad->ta", flux, mesh.grads) * mesh.volumes[:, None]
    b = np.zeros(mesh.n_dofs)
    np.add.at(b, mesh.cell_dofs, be)
    return b


def assemble_load(mesh, coeff: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Corrector load b[a] = -sum_T |T| (C_T p) . grad(phi_a) for unit |p|."""
    p = np.asarray(p, dtype=float)
    if abs(np.linalg.norm(p) - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, got |p| = {np.linalg.norm(p)}")
    return assemble_flux_load(mesh, -np.einsum("tde,e->td", coeff, p))


def solve_zero_mean(
    stiffness: StiffnessMatrix,
    b: np.ndarray,
    rtol: float = 1e-10,
    max_iter: int | None = None,
) -> DofField:
    """Solve K u = b on the zero-volume-mean subspace by preconditioned CG.

    The load must be orthogonal to constants (|sum b| <= 1e-9 ||b||),
    which every flux load satisfies up to roundoff.  Raises SolverError if
    the relative residual does not reach ``rtol`` within ``max_iter``
    iterations (default 50 * n_dofs).
    """
    mesh = stiffness.mesh
    K = stiffness.mat
    n = mesh.n_dofs
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return DofField(values=np.zeros(n), mesh=mesh, residual=0.0, iterations=0)
    if abs(float(b.sum())) > 1e-9 * bnorm:
        raise SolverError(
            f"load is not mean-compatible: |sum b| = {abs(float(b.sum())):.3e}"
        )
    if max_iter is None:
        max_iter = 50 * n

    diag = K.diagonal()
    if (diag <= 0.0).any():
        raise SolverError("stiffness diagonal has non-positive entries")

    x = np.zeros(n)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    it = 0
    converged = False
    while it < max_iter:
        Kp = K @ p
        pKp = float(p @ Kp)
        if pKp <= 0.0:
            raise SolverError(f"CG breakdown at iteration {it}: p.Kp = {pKp:.3e}")
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        it += 1
        if float(np.linalg.norm(r)) <= rtol * bnorm:
            converged = True
            break
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if not converged:
        raise SolverError(
            f"CG did not reach rtol {rtol:.1e} in {max_iter} iterations "
            f"(residual {float(np.linalg.norm(r)) / bnorm:.3e})"
        )

    x -= float(x @ mesh.dof_volumes) / mesh.volume
    true_res = float(np.linalg.norm(K @ x - b)) / bnorm
    return DofField(values=x, mesh=mesh, residual=true_res, iterations=it)


def element_gradients(mesh, u) -> np.ndarray:
    """Per-element gradient (n_cells, d) of a DOF field."""
    vals = u.values if isinstance(u, DofField) else np.asarray(u)
    return np.einsum("tad,ta->td", mesh.grads, vals[mesh.cell_dofs])


def grad_l2_norm(mesh, grad: np.ndarray) -> float:
    """L2(Q_N) norm of a per-element gradient field."""
    return float(np.sqrt(np.einsum("t,td,td->", mesh.volumes, grad, grad)))
