"""Stationary random coefficient fields on the integer lattice.

A realization hands out independent uniform draws per lattice cell through
a counter-based generator keyed by (seed, cell); evaluation order therefore
never matters, and the lattice shift tau_k acts exactly: shifting the
realization by k re-keys every cell j to j + k.  On top of the draws sit
the two perturbation families: an additive cellwise-random multiple of the
identity added to a periodic profile, and a random diffeomorphism built
from compactly supported bumps, one per cell, with cellwise-random
amplitudes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from perthom.errors import FamilyValidityError
from perthom.fem import sym_eig_range
from perthom.mesh import SuperMesh

__all__ = [
    "N_SLOTS",
    "Realization",
    "make_realization",
    "ConstantProfile",
    "TwoPhase1D",
    "Laminate2D",
    "Checkerboard2D",
    "periodic_profile",
    "AdditiveCoefficients",
    "cellwise_additive",
    "RandomDiffeomorphism",
    "cellwise_bumps",
    "stationarity_check",
    "ergodic_average",
]

# independent uniform draws available per lattice cell; slots 0 and 1 feed
# the additive family, slots 0..d-1 and d..2d-1 the diffeomorphism family
N_SLOTS = 8

_U64 = 1 << 64


@dataclass(frozen=True)
class Realization:
    """One sample of the random environment, identified by a seed.

    ``cell_draw(k)`` returns the N_SLOTS uniform draws in [-1, 1] attached
    to lattice cell k; it is a pure function of (seed, k + offset), so
    ``shift(k)`` realizes the lattice shift: shift(k).cell_draw(j) equals
    cell_draw(j + k) bit for bit.
    """

    seed: int
    offset: tuple = ()

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def shift(self, k) -> "Realization":
        k = tuple(int(v) for v in np.atleast_1d(k))
        off = self.offset if self.offset else (0,) * len(k)
        if len(off) != len(k):
            raise ValueError(f"shift dimension {len(k)} != offset dimension {len(off)}")
        return Realization(self.seed, tuple(o + v for o, v in zip(off, k)))

    def cell_draw(self, k) -> np.ndarray:
        """Uniform draws in [-1, 1], shape (N_SLOTS,), for lattice cell k."""
        k = tuple(int(v) for v in np.atleast_1d(k))
        if self.offset:
            if len(self.offset) != len(k):
                raise ValueError("cell index dimension does not match shift offset")
            k = tuple(o + v for o, v in zip(self.offset, k))
        if len(k) > 3:
            raise ValueError("lattice dimension > 3 is not supported")
        counter = np.zeros(4, dtype=np.uint64)
        for i, ki in enumerate(k):
            counter[i + 1] = np.uint64(ki % _U64)
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=counter))
        return gen.uniform(-1.0, 1.0, N_SLOTS)

    def draws(self, ks: np.ndarray) -> np.ndarray:
        """Draws for many cells at once: (m, d) int array -> (m, N_SLOTS)."""
        ks = np.asarray(ks, dtype=np.int64)
        if ks.ndim == 1:
            ks = ks[:, None]
        uniq, inv = np.unique(ks, axis=0, return_inverse=True)
        table = np.empty((uniq.shape[0], N_SLOTS))
        for i in range(uniq.shape[0]):
            table[i] = self.cell_draw(uniq[i])
        return table[inv]


def make_realization(seed: int) -> Realization:
    """Realization of the environment for a master seed."""
    return Realization(int(seed))


def _wrap(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split points into lattice cell k = floor(x + 1/2) and local u in Q."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = np.floor(x + 0.5).astype(np.int64)
    return k, x - k


def _diag_field(vals: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((vals.shape[0], dim, dim))
    for i in range(dim):
        out[:, i, i] = vals
    return out


@dataclass(frozen=True)
class ConstantProfile:
    """A_per(x) = diag(entries), constant in x."""

    dim: int
    entries: tuple

    def __post_init__(self):
        if len(self.entries) != self.dim:
            raise FamilyValidityError("constant profile needs one entry per axis")
        if min(self.entries) <= 0:
            raise FamilyValidityError("constant profile entries must be positive")

    @property
    def eig_range(self) -> tuple[float, float]:
        return (min(self.entries), max(self.entries))

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], self.dim, self.dim))
        for i, v in enumerate(self.entries):
            out[:, i, i] = v
        return out


@dataclass(frozen=True)
class TwoPhase1D:
    """1D profile: a0 on the left half-cell, a1 on the right, repeated."""

    a0: float
    a1: float
    dim: int = 1

    def __post_init__(self):
        if min(self.a0, self.a1) <= 0:
            raise FamilyValidityError("phase values must be positive")

    @property
    def eig_range(self) -> tuple[float, float]:
        return (min(self.a0, self.a1), max(self.a0, self.a1))

    def eval(self, x: np.ndarray) -> np.ndarray:
        _, u = _wrap(x)
        vals = np.where(u[:, 0] < 0.0, self.a0, self.a1)
        return _diag_field(vals, 1)


@dataclass(frozen=True)
class Laminate2D:
    """2D laminate a(x_0) * I with a = a0 on the left half-cell strips."""

    a0: float
    a1: float
    dim: int = 2

    def __post_init__(self):
        if min(self.a0, self.a1) <= 0:
            raise FamilyValidityError("phase values must be positive")

    @property
    def eig_range(self) -> tuple[float, float]:
        return (min(self.a0, self.a1), max(self.a0, self.a1))

    def eval(self, x: np.ndarray) -> np.ndarray:
        _, u = _wrap(x)
        vals = np.where(u[:, 0] < 0.0, self.a0, self.a1)
        return _diag_field(vals, 2)


@dataclass(frozen=True)
class Checkerboard2D:
    """2D quarter-cell checkerboard: a0 on quadrants where u_0 u_1 >= 0."""

    a0: float
    a1: float
    dim: int = 2

    def __post_init__(self):
        if min(self.a0, self.a1) <= 0:
            raise FamilyValidityError("phase values must be positive")

    @property
    def eig_range(self) -> tuple[float, float]:
        return (min(self.a0, self.a1), max(self.a0, self.a1))

    def eval(self, x: np.ndarray) -> np.ndarray:
        _, u = _wrap(x)
        odd = (u[:, 0] < 0.0) ^ (u[:, 1] < 0.0)
        vals = np.where(odd, self.a1, self.a0)
        return _diag_field(vals, 2)


_PROFILES = {
    "constant": ConstantProfile,
    "two_phase_1d": TwoPhase1D,
    "laminate_2d": Laminate2D,
    "checkerboard_2d": Checkerboard2D,
}


def periodic_profile(name: str, **params) -> object:
    """Named periodic background profile; see _PROFILES for choices."""
    if name not in _PROFILES:
        raise FamilyValidityError(
            f"unknown profile {name!r}; choices: {sorted(_PROFILES)}"
        )
    return _PROFILES[name](**params)


def _mesh_lattice(mesh) -> np.ndarray:
    if isinstance(mesh, SuperMesh):
        return mesh.cell_lattice
    return np.zeros((mesh.n_cells, mesh.dim), dtype=np.int64)


@dataclass(frozen=True)
class AdditiveCoefficients:
    """Additive perturbation family A_eta = A_per + eta A_1 + R_eta.

    A_1 is ``amplitude * (X_k + mean_offset) * I`` with X_k the slot-0
    uniform of the cell containing x, so E[A_1] = amplitude * mean_offset * I
    in closed form.  With ``remainder="quadratic"`` the family carries
    R_eta = eta^2 * remainder_amplitude * Y_k * I (slot 1), which meets the
    required bound |R_eta| <= C eta^2 with C = remainder_amplitude.
    Construction rejects parameter sets whose ellipticity window over
    |eta| <= eta_max closes.
    """

    profile: object
    amplitude: float
    mean_offset: float = 0.0
    remainder: str = "none"
    remainder_amplitude: float = 0.0
    eta_max: float = 0.5
    gamma: float = field(init=False, default=0.0)
    bound_hi: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.remainder not in ("none", "quadratic"):
            raise FamilyValidityError(f"unknown remainder kind {self.remainder!r}")
        if self.amplitude < 0 or self.remainder_amplitude < 0:
            raise FamilyValidityError("amplitudes must be >= 0")
        if self.eta_max <= 0:
            raise FamilyValidityError("eta_max must be > 0")
        lo, hi = self.profile.eig_range
        sup1 = self.amplitude * (1.0 + abs(self.mean_offset))
        sup2 = self.remainder_amplitude if self.remainder == "quadratic" else 0.0
        gamma = lo - self.eta_max * sup1 - self.eta_max**2 * sup2
        if gamma <= 0:
            raise FamilyValidityError(
                f"ellipticity lost over |eta| <= {self.eta_max}: "
                f"min eigenvalue bound {gamma:.3e} <= 0"
            )
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(
            self, "bound_hi", hi + self.eta_max * sup1 + self.eta_max**2 * sup2
        )

    @property
    def dim(self) -> int:
        return self.profile.dim

    def check_eta(self, eta: float) -> None:
        if abs(eta) > self.eta_max + 1e-15:
            raise FamilyValidityError(
                f"|eta| = {abs(eta)} exceeds family validity eta_max = {self.eta_max}"
            )

    # pointwise evaluators -------------------------------------------------
    def a_per(self, x: np.ndarray) -> np.ndarray:
        return self.profile.eval(np.atleast_2d(x))

    def a_one(self, x: np.ndarray, r: Realization) -> np.ndarray:
        k, _ = _wrap(x)
        vals = self.amplitude * (r.draws(k)[:, 0] + self.mean_offset)
        return _diag_field(vals, self.dim)

    def remainder_term(self, x: np.ndarray, r: Realization, eta: float) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.remainder == "none":
            return np.zeros((x.shape[0], self.dim, self.dim))
        k, _ = _wrap(x)
        vals = eta**2 * self.remainder_amplitude * r.draws(k)[:, 1]
        return _diag_field(vals, self.dim)

    def a_eta(self, x: np.ndarray, r: Realization, eta: float) -> np.ndarray:
        self.check_eta(eta)
        return self.a_per(x) + eta * self.a_one(x, r) + self.remainder_term(x, r, eta)

    # per-element evaluators (exact lattice indices from the mesh) ----------
    def a_per_on(self, mesh) -> np.ndarray:
        return self.profile.eval(mesh.barycenters)

    def a_one_on(self, mesh, r: Realization) -> np.ndarray:
        vals = self.amplitude * (r.draws(_mesh_lattice(mesh))[:, 0] + self.mean_offset)
        return _diag_field(vals, self.dim)

    def remainder_on(self, mesh, r: Realization, eta: float) -> np.ndarray:
        if self.remainder == "none":
            return np.zeros((mesh.n_cells, self.dim, self.dim))
        vals = eta**2 * self.remainder_amplitude * r.draws(_mesh_lattice(mesh))[:, 1]
        return _diag_field(vals, self.dim)

    def a_eta_on(self, mesh, r: Realization, eta: float) -> np.ndarray:
        self.check_eta(eta)
        return (
            self.a_per_on(mesh)
            + eta * self.a_one_on(mesh, r)
            + self.remainder_on(mesh, r, eta)
        )

    def mean_a_one(self) -> np.ndarray:
        """E[A_1] = amplitude * mean_offset * I, exact."""
        return self.amplitude * self.mean_offset * np.eye(self.dim)


def cellwise_additive(
    profile,
    amplitude: float,
    mean_offset: float = 0.0,
    remainder: str = "none",
    remainder_amplitude: float = 0.0,
    eta_max: float = 0.5,
) -> AdditiveCoefficients:
    """Additive family with one uniform draw per lattice cell (see class)."""
    return AdditiveCoefficients(
        profile=profile,
        amplitude=amplitude,
        mean_offset=mean_offset,
        remainder=remainder,
        remainder_amplitude=remainder_amplitude,
        eta_max=eta_max,
    )


def _bump(u: np.ndarray) -> np.ndarray:
    """C^1 bump (1 - 4u^2)^2 on [-1/2, 1/2]; vanishes with its derivative."""
    return (1.0 - 4.0 * u * u) ** 2


def _bump_d(u: np.ndarray) -> np.ndarray:
    return -16.0 * u * (1.0 - 4.0 * u * u)


def _bump_in(u: np.ndarray) -> np.ndarray:
    """Second C^1 bump (1 - 4u^2)^3, used along a component's own axis."""
    return (1.0 - 4.0 * u * u) ** 3


def _bump_in_d(u: np.ndarray) -> np.ndarray:
    return -24.0 * u * (1.0 - 4.0 * u * u) ** 2


@dataclass(frozen=True)
class RandomDiffeomorphism:
    """Random deformation Phi_eta(x) = x + eta Psi(x) + Theta_eta(x).

    Per lattice cell k, component i of Psi is the product bump
    c * X_k^(i) * g(u_i) * prod_{j != i} beta(u_j) (slots 0..d-1), with two
    distinct C^1 bumps beta(t) = (1-4t^2)^2 and g(t) = (1-4t^2)^3.  Psi is
    C^1, vanishes on the cell skeleton, and is stationary; giving each
    component a different shape along its own axis keeps grad Psi away from
    rank one, so det(grad Phi) carries a genuine quadratic-in-eta remainder
    (a single shared shape would make it exactly affine in eta).  The
    second-order term Theta_eta = eta^2 * t * (same shapes, slots d..2d-1)
    satisfies |Theta_eta| + |grad Theta_eta| <= C eta^2 by construction.

    ``eta0`` is the validated deformation radius: over sampled bump extrema
    and extreme draw signs, the eigenvalues of
    (grad Phi)^{-T} (grad Phi)^{-1} stay inside [1/2, 3/2] for |eta| <=
    eta0, and ``nu`` is the sampled lower bound of det(grad Phi) there.
    Corrector calls reject |eta| > eta0.
    """

    dim: int
    amplitude: float
    theta_amplitude: float = 0.0
    eta_max: float = 0.5
    nu: float = field(init=False, default=0.0)
    eta0: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise FamilyValidityError(f"dim must be 1 or 2, got {self.dim}")
        if self.amplitude < 0 or self.theta_amplitude < 0:
            raise FamilyValidityError("amplitudes must be >= 0")
        if self.eta_max <= 0:
            raise FamilyValidityError("eta_max must be > 0")
        eta0, nu = self._validate_radius()
        if eta0 <= 1e-12:
            raise FamilyValidityError(
                "deformation amplitude too large: no positive eta window "
                "keeps the Jacobian eigenvalues inside [1/2, 3/2]"
            )
        object.__setattr__(self, "eta0", eta0)
        object.__setattr__(self, "nu", nu)

    # draw-level geometry, shared by evaluators and construction sampling ---
    def _fields_from_draws(self, u, X, Y, eta):
        """Psi, grad Psi, Theta_eta, grad Theta_eta at local points u.

        u : (m, d) points in the closed unit cell; X, Y : (m, d) draws.
        """
        d = self.dim
        beta = _bump(u)  # (m, d)
        dbeta = _bump_d(u)
        g = _bump_in(u)
        dg = _bump_in_d(u)
        # shape[:, i] = g(u_i) prod_{j != i} beta(u_j)
        shape = np.empty_like(beta)
        dshape = np.empty((u.shape[0], d, d))
        for i in range(d):
            others = np.ones(u.shape[0])
            for l in range(d):
                if l != i:
                    others = others * beta[:, l]
            shape[:, i] = g[:, i] * others
            for j in range(d):
                if j == i:
                    dshape[:, i, j] = dg[:, i] * others
                else:
                    rest = np.ones(u.shape[0])
                    for l in range(d):
                        if l != i and l != j:
                            rest = rest * beta[:, l]
                    dshape[:, i, j] = g[:, i] * dbeta[:, j] * rest
        psi = self.amplitude * X * shape
        theta = self.theta_amplitude * eta**2 * Y * shape
        grad_psi = self.amplitude * X[:, :, None] * dshape
        grad_theta = self.theta_amplitude * eta**2 * Y[:, :, None] * dshape
        return psi, grad_psi, theta, grad_theta

    def _validate_radius(self) -> tuple[float, float]:
        d = self.dim
        n = 129 if d == 1 else 33
        axis = np.linspace(-0.5, 0.5, n)
        if d == 1:
            u = axis[:, None]
        else:
            g0, g1 = np.meshgrid(axis, axis, indexing="ij")
            u = np.stack([g0.ravel(), g1.ravel()], axis=1)
        combos = list(itertools.product((-1.0, 1.0), repeat=2 * d))

        def window_ok(eta: float) -> tuple[bool, float]:
            min_det = np.inf
            ok = True
            for combo in combos:
                X = np.broadcast_to(np.array(combo[:d]), u.shape)
                Y = np.broadcast_to(np.array(combo[d:]), u.shape)
                for e in (eta, -eta):
                    _, gpsi, _, gtheta = self._fields_from_draws(u, X, Y, e)
                    gphi = np.eye(d) + e * gpsi + gtheta
                    det = _det(gphi)
                    min_det = min(min_det, float(det.min()))
                    if det.min() <= 0:
                        ok = False
                        continue
                    inv = _inv_from_det(gphi, det)
                    m = np.einsum("tji,tjk->tik", inv, inv)
                    lo, hi = sym_eig_range(m)
                    if lo < 0.5 or hi > 1.5:
                        ok = False
            return ok, min_det

        ok, min_det = window_ok(self.eta_max)
        if ok:
            return self.eta_max, min_det
        lo, hi = 0.0, self.eta_max
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if window_ok(mid)[0]:
                lo = mid
            else:
                hi = mid
        return lo, window_ok(lo)[1] if lo > 0 else 0.0

    def check_eta(self, eta: float) -> None:
        if abs(eta) > self.eta0 + 1e-15:
            raise FamilyValidityError(
                f"|eta| = {abs(eta)} exceeds validated deformation radius "
                f"eta0 = {self.eta0}"
            )

    def _XY(self, r: Realization, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        draws = r.draws(k)
        return draws[:, :d], draws[:, d : 2 * d]

    # pointwise evaluators ---------------------------------------------------
    def displacement(self, x, r: Realization) -> np.ndarray:
        k, u = _wrap(x)
        X, Y = self._XY(r, k)
        psi, _, _, _ = self._fields_from_draws(u, X, Y, 0.0)
        return psi

    def grad_displacement(self, x, r: Realization) -> np.ndarray:
        k, u = _wrap(x)
        X, Y = self._XY(r, k)
        _, gpsi, _, _ = self._fields_from_draws(u, X, Y, 0.0)
        return gpsi

    def div_displacement(self, x, r: Realization) -> np.ndarray:
        return np.trace(self.grad_displacement(x, r), axis1=1, axis2=2)

    def map_points(self, x, r: Realization, eta: float) -> np.ndarray:
        self.check_eta(eta)
        k, u = _wrap(x)
        X, Y = self._XY(r, k)
        psi, _, theta, _ = self._fields_from_draws(u, X, Y, eta)
        return np.atleast_2d(np.asarray(x, dtype=float)) + eta * psi + theta

    def grad_map(self, x, r: Realization, eta: float) -> np.ndarray:
        self.check_eta(eta)
        k, u = _wrap(x)
        X, Y = self._XY(r, k)
        _, gpsi, _, gtheta = self._fields_from_draws(u, X, Y, eta)
        return np.eye(self.dim) + eta * gpsi + gtheta

    def det_grad_map(self, x, r: Realization, eta: float) -> np.ndarray:
        return _det(self.grad_map(x, r, eta))

    def inv_grad_map(self, x, r: Realization, eta: float) -> np.ndarray:
        g = self.grad_map(x, r, eta)
        return _inv_from_det(g, _det(g))

    def inverse_remainder(self, x, r: Realization, eta: float) -> np.ndarray:
        """Gamma_eta = (grad Phi_eta)^{-1} - I + eta grad Psi, an O(eta^2) term."""
        inv = self.inv_grad_map(x, r, eta)
        gpsi = self.grad_displacement(x, r)
        return inv - np.eye(self.dim) + eta * gpsi

    def det_remainder(self, x, r: Realization, eta: float) -> np.ndarray:
        """sigma_eta = det(grad Phi_eta) - 1 - eta div Psi, an O(eta^2) term."""
        det = self.det_grad_map(x, r, eta)
        return det - 1.0 - eta * self.div_displacement(x, r)

    # per-element evaluators -------------------------------------------------
    def pieces_on(self, mesh, r: Realization, eta: float) -> "TransformedPieces":
        """Barycenter values of everything the transformed problem needs."""
        self.check_eta(eta)
        k = _mesh_lattice(mesh)
        _, u = _wrap(mesh.barycenters)
        X, Y = self._XY(r, k)
        _, gpsi, _, gtheta = self._fields_from_draws(u, X, Y, eta)
        gphi = np.eye(self.dim) + eta * gpsi + gtheta
        det = _det(gphi)
        inv = _inv_from_det(gphi, det)
        return TransformedPieces(
            grad_map=gphi,
            det=det,
            inv=inv,
            grad_psi=gpsi,
            div_psi=np.trace(gpsi, axis1=1, axis2=2),
        )


def _det(mats: np.ndarray) -> np.ndarray:
    d = mats.shape[-1]
    if d == 1:
        return mats[..., 0, 0].copy()
    return mats[..., 0, 0] * mats[..., 1, 1] - mats[..., 0, 1] * mats[..., 1, 0]


def _inv_from_det(mats: np.ndarray, det: np.ndarray) -> np.ndarray:
    d = mats.shape[-1]
    out = np.empty_like(mats)
    if d == 1:
        out[..., 0, 0] = 1.0 / det
        return out
    out[..., 0, 0] = mats[..., 1, 1] / det
    out[..., 1, 1] = mats[..., 0, 0] / det
    out[..., 0, 1] = -mats[..., 0, 1] / det
    out[..., 1, 0] = -mats[..., 1, 0] / det
    return out


@dataclass(frozen=True)
class TransformedPieces:
    """Per-element geometry of the deformation at the quadrature points."""

    grad_map: np.ndarray  # (n_cells, d, d)
    det: np.ndarray  # (n_cells,)
    inv: np.ndarray  # (n_cells, d, d)
    grad_psi: np.ndarray  # (n_cells, d, d)
    div_psi: np.ndarray  # (n_cells,)


def cellwise_bumps(
    dim: int,
    amplitude: float,
    theta_amplitude: float = 0.0,
    eta_max: float = 0.5,
) -> RandomDiffeomorphism:
    """Diffeomorphism family with one bump per cell (see class docstring)."""
    return RandomDiffeomorphism(
        dim=dim,
        amplitude=amplitude,
        theta_amplitude=theta_amplitude,
        eta_max=eta_max,
    )


def stationarity_check(evaluator, r: Realization, k, points: np.ndarray) -> float:
    """Max |evaluator(x + k, r) - evaluator(x, shift_k r)| over the points.

    A field built from the cell draws is stationary exactly; the returned
    discrepancy is 0.0 up to roundoff for such fields.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = np.asarray(k, dtype=np.int64)
    a = evaluator(points + k, r)
    b = evaluator(points, r.shift(k))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def ergodic_average(evaluator, r: Realization, N: int, x) -> np.ndarray:
    """Average of evaluator(x, shift_k r) over the lattice block |k|_inf <= N.

    By the ergodic theorem the average converges to the expectation at the
    fixed point x as N grows; the spread at finite N scales like
    (2N+1)^(-d/2) for cellwise-independent fields.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    total = None
    count = 0
    for k in itertools.product(range(-N, N + 1), repeat=d):
        val = np.asarray(evaluator(x, r.shift(k)), dtype=float)
        total = val if total is None else total + val
        count += 1
    return total / count
