"""Correctors and homogenized matrices for the additive perturbation model.

For A_eta = A_per + eta A_1 + R_eta the supercell corrector solves

    -div(A_eta(x, w) (p + grad w_eta)) = 0   on Q_N, periodic,

and the homogenized approximation is the flux average
[A_eta*]_ij = (1/|Q_N|) int e_i . A_eta (e_j + grad w_eta,j).  The
zeroth-order corrector solves the same problem for A_per on the unit cell
(it does not depend on N), and the first-order corrector solves, on Q_N,

    -div(A_per (p + grad w1)) = div(A_1 (p + grad w0)).

The first-order matrix combines both correctors; the quantity of interest
is the second-order residual (A_eta* - A_per* - eta A_1*) / eta^2, which
stays bounded uniformly in eta, N, and the realization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from perthom import fem
from perthom.fields import AdditiveCoefficients, Realization
from perthom.mesh import SuperMesh, UnitMesh

__all__ = [
    "CorrectorSolution",
    "HomogenizedReport",
    "solve_corrector_0",
    "solve_corrector_eta",
    "solve_corrector_1",
    "corrector_set_0",
    "corrector_set_eta",
    "corrector_set_1",
    "replicate_values",
    "replicate_gradients",
    "homogenized_eta",
    "homogenized_per",
    "homogenized_first_order",
    "first_order_limit",
    "residual_report",
]


@dataclass
class CorrectorSolution:
    """A solved corrector problem in one direction."""

    p: np.ndarray  # unit direction vector
    field: fem.DofField
    gradients: np.ndarray  # (n_cells, d)

    @property
    def residual(self) -> float:
        return self.field.residual


@dataclass
class HomogenizedReport:
    """Per-realization matrices and diagnostics at one grid point.

    ``residual_matrix`` is (A_eta* - A_per* - eta A_1*) / eta^2.  ``v_norm``
    and ``z_norm`` are the direction-wise maxima of the volume-averaged
    corrector expansion errors

        v: |grad w_eta - grad w0|_{L2} / (|eta| sqrt(|Q_N|)),
        z: |grad w_eta - grad w0 - eta grad w1|_{L2} / (eta^2 sqrt(|Q_N|)),

    both of which the theory bounds uniformly in eta, N, and the seed.
    """

    model: int
    eta: float
    N: int
    subdivisions: int
    seed: int
    a_eta_star: np.ndarray
    a_per_star: np.ndarray
    a1_star: np.ndarray
    residual_matrix: np.ndarray
    v_norm: float
    z_norm: float
    max_solver_residual: float
    normalization: str = ""

    def residual_max_norm(self) -> float:
        return float(np.abs(self.residual_matrix).max())

    def residual_frobenius(self) -> float:
        return float(np.linalg.norm(self.residual_matrix))


def _canonical(dim: int, j: int) -> np.ndarray:
    p = np.zeros(dim)
    p[j] = 1.0
    return p


def _solve(
    mesh, coeff: np.ndarray, flux: np.ndarray, rtol: float, max_iter=None
) -> CorrectorSolution:
    K = fem.assemble_stiffness(mesh, coeff)
    b = fem.assemble_flux_load(mesh, flux)
    u = fem.solve_zero_mean(K, b, rtol=rtol, max_iter=max_iter)
    return CorrectorSolution(
        p=np.zeros(mesh.dim), field=u, gradients=fem.element_gradients(mesh, u)
    )


def solve_corrector_0(
    coeffs: AdditiveCoefficients,
    unit_mesh: UnitMesh,
    p,
    rtol: float = 1e-10,
    max_iter=None,
) -> CorrectorSolution:
    """Unit-cell corrector for the periodic background A_per (N-independent)."""
    p = np.asarray(p, dtype=float)
    a = coeffs.a_per_on(unit_mesh)
    sol = _solve(unit_mesh, a, -np.einsum("tde,e->td", a, p), rtol, max_iter)
    sol.p = p
    return sol


def solve_corrector_eta(
    coeffs: AdditiveCoefficients,
    r: Realization,
    eta: float,
    mesh: SuperMesh,
    p,
    rtol: float = 1e-10,
    max_iter=None,
) -> CorrectorSolution:
    """Supercell corrector for the realized coefficient A_eta(., w)."""
    coeffs.check_eta(eta)
    p = np.asarray(p, dtype=float)
    a = coeffs.a_eta_on(mesh, r, eta)
    sol = _solve(mesh, a, -np.einsum("tde,e->td", a, p), rtol, max_iter)
    sol.p = p
    return sol


def replicate_values(mesh: SuperMesh, w0: CorrectorSolution) -> np.ndarray:
    """Unit-cell corrector DOF values extended Q-periodically to Q_N."""
    return w0.field.values[mesh.dof_base]


def replicate_gradients(mesh: SuperMesh, w0: CorrectorSolution) -> np.ndarray:
    """Unit-cell corrector gradients extended Q-periodically to Q_N."""
    return w0.gradients[mesh.cell_base]


def solve_corrector_1(
    coeffs: AdditiveCoefficients,
    r: Realization,
    mesh: SuperMesh,
    w0: CorrectorSolution,
    p,
    rtol: float = 1e-10,
    max_iter=None,
) -> CorrectorSolution:
    """First-order corrector on Q_N, driven by A_1 acting on (p + grad w0)."""
    p = np.asarray(p, dtype=float)
    a_per = coeffs.a_per_on(mesh)
    a_one = coeffs.a_one_on(mesh, r)
    g0 = replicate_gradients(mesh, w0)
    flux = -np.einsum("tde,te->td", a_one, p[None, :] + g0)
    sol = _solve(mesh, a_per, flux, rtol, max_iter)
    sol.p = p
    return sol


def corrector_set_0(coeffs, unit_mesh, rtol: float = 1e-10, max_iter=None):
    return [
        solve_corrector_0(coeffs, unit_mesh, _canonical(coeffs.dim, j), rtol, max_iter)
        for j in range(coeffs.dim)
    ]


def corrector_set_eta(coeffs, r, eta, mesh, rtol: float = 1e-10, max_iter=None):
    return [
        solve_corrector_eta(coeffs, r, eta, mesh, _canonical(coeffs.dim, j), rtol, max_iter)
        for j in range(coeffs.dim)
    ]


def corrector_set_1(coeffs, r, mesh, w0s, rtol: float = 1e-10, max_iter=None):
    return [
        solve_corrector_1(coeffs, r, mesh, w0s[j], _canonical(coeffs.dim, j), rtol, max_iter)
        for j in range(coeffs.dim)
    ]


def _flux_average(mesh, coeff: np.ndarray, correctors: list[CorrectorSolution]) -> np.ndarray:
    """Matrix with columns (1/|Q_N|) sum_T |T| C_T (e_j + grad w_j)."""
    d = mesh.dim
    out = np.empty((d, d))
    for j, sol in enumerate(correctors):
        flux = np.einsum(
            "t,tde,te->d", mesh.volumes, coeff, sol.p[None, :] + sol.gradients
        )
        out[:, j] = flux / mesh.volume
    return out


def homogenized_eta(
    coeffs: AdditiveCoefficients,
    r: Realization,
    eta: float,
    mesh: SuperMesh,
    correctors: list[CorrectorSolution],
) -> np.ndarray:
    """Realized supercell matrix [A_eta*]_ij = avg e_i . A_eta (e_j + grad w_j)."""
    coeffs.check_eta(eta)
    return _flux_average(mesh, coeffs.a_eta_on(mesh, r, eta), correctors)


def homogenized_per(coeffs: AdditiveCoefficients, unit_mesh: UnitMesh, correctors) -> np.ndarray:
    """Periodic reference matrix on the unit cell."""
    return _flux_average(unit_mesh, coeffs.a_per_on(unit_mesh), correctors)


def homogenized_first_order(
    coeffs: AdditiveCoefficients,
    r: Realization,
    mesh: SuperMesh,
    w0s: list[CorrectorSolution],
    w1s: list[CorrectorSolution],
) -> np.ndarray:
    """First-order matrix: avg of e_i . [A_1 (e_j + grad w0) + A_per grad w1]."""
    d = mesh.dim
    a_per = coeffs.a_per_on(mesh)
    a_one = coeffs.a_one_on(mesh, r)
    out = np.empty((d, d))
    for j in range(d):
        g0 = replicate_gradients(mesh, w0s[j])
        col = np.einsum(
            "t,tde,te->d", mesh.volumes, a_one, w0s[j].p[None, :] + g0
        ) + np.einsum("t,tde,te->d", mesh.volumes, a_per, w1s[j].gradients)
        out[:, j] = col / mesh.volume
    return out


def first_order_limit(coeffs: AdditiveCoefficients, unit_mesh: UnitMesh, w0s) -> np.ndarray:
    """Deterministic large-N limit of the first-order matrix.

    As the supercell grows, the first-order matrix converges almost surely
    to int_Q (e_i + grad w0_i) . E[A_1] (e_j + grad w0_j); the expectation
    of A_1 is known in closed form for the additive family.
    """
    d = unit_mesh.dim
    mean_a1 = coeffs.mean_a_one()
    out = np.empty((d, d))
    fields = [w0s[j].p[None, :] + w0s[j].gradients for j in range(d)]
    for i in range(d):
        for j in range(d):
            out[i, j] = np.einsum(
                "t,td,de,te->", unit_mesh.volumes, fields[i], mean_a1, fields[j]
            )
    return out / unit_mesh.volume


def residual_report(
    coeffs: AdditiveCoefficients,
    r: Realization,
    eta: float,
    mesh: SuperMesh,
    *,
    w0s: list[CorrectorSolution] | None = None,
    w1s: list[CorrectorSolution] | None = None,
    a_per_star: np.ndarray | None = None,
    wetas: list[CorrectorSolution] | None = None,
    seed: int = -1,
    rtol: float = 1e-10,
    max_iter=None,
) -> HomogenizedReport:
    """Second-order residual diagnostics for one realization and one eta.

    Solves whatever correctors are not supplied.  eta = 0 is rejected: the
    residual normalizes by eta^2.
    """
    if eta == 0.0:
        raise ValueError("residual_report requires eta != 0")
    coeffs.check_eta(eta)
    if w0s is None:
        w0s = corrector_set_0(coeffs, mesh.base, rtol, max_iter)
    if a_per_star is None:
        a_per_star = homogenized_per(coeffs, mesh.base, w0s)
    if w1s is None:
        w1s = corrector_set_1(coeffs, r, mesh, w0s, rtol, max_iter)
    if wetas is None:
        wetas = corrector_set_eta(coeffs, r, eta, mesh, rtol, max_iter)

    a_eta_star = homogenized_eta(coeffs, r, eta, mesh, wetas)
    a1_star = homogenized_first_order(coeffs, r, mesh, w0s, w1s)
    residual = (a_eta_star - a_per_star - eta * a1_star) / eta**2

    v_norm = 0.0
    z_norm = 0.0
    sqrt_vol = np.sqrt(mesh.volume)
    for j in range(mesh.dim):
        g0 = replicate_gradients(mesh, w0s[j])
        dv = wetas[j].gradients - g0
        v_norm = max(v_norm, fem.grad_l2_norm(mesh, dv) / (abs(eta) * sqrt_vol))
        dz = dv - eta * w1s[j].gradients
        z_norm = max(z_norm, fem.grad_l2_norm(mesh, dz) / (eta**2 * sqrt_vol))

    solver_res = max(
        [s.residual for s in w0s]
        + [s.residual for s in w1s]
        + [s.residual for s in wetas]
    )
    return HomogenizedReport(
        model=1,
        eta=eta,
        N=mesh.N,
        subdivisions=mesh.subdivisions,
        seed=seed,
        a_eta_star=a_eta_star,
        a_per_star=a_per_star,
        a1_star=a1_star,
        residual_matrix=residual,
        v_norm=v_norm,
        z_norm=z_norm,
        max_solver_residual=solver_res,
    )
