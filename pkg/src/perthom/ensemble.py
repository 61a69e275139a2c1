"""Seeded Monte Carlo sweeps over (eta, N, h) grids.

A sweep solves, for every grid point and every seed, the corrector
problems of the selected model and aggregates the per-realization
residual diagnostics into per-grid-point statistics.  Work is split into
(N, subdivisions, seed) tasks so the eta-independent correctors are solved
once per task; tasks are independent, deterministic functions of the spec,
and merged in grid order, so results are identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from perthom import additive, diffeo
from perthom.errors import ConfigError
from perthom.fields import AdditiveCoefficients, RandomDiffeomorphism, make_realization
from perthom.mesh import build_unit_mesh, replicate

__all__ = [
    "SweepSpec",
    "EnsembleStats",
    "run_sweep",
    "LimitStudyRow",
    "first_order_limit_study",
    "RefinementRow",
    "RefinementSummary",
    "h_refinement_study",
    "BandVerdict",
    "residual_band_check",
]


@dataclass(frozen=True)
class SweepSpec:
    """Grid, family, and solver settings of one Monte Carlo sweep.

    Seeds are seed_base + 0 .. seed_base + n_seeds - 1.  For model 1,
    ``coefficients`` holds the additive family; for model 2, ``diffeo``
    holds the deformation and ``profile`` the background material.
    """

    model: int
    etas: tuple
    Ns: tuple
    subdivisions: tuple
    n_seeds: int
    seed_base: int = 0
    coefficients: AdditiveCoefficients | None = None
    diffeo: RandomDiffeomorphism | None = None
    profile: object | None = None
    rtol: float = 1e-10
    max_iter: int | None = None
    normalization: str = "volume-normalized"

    def validate(self) -> None:
        if self.model not in (1, 2):
            raise ConfigError(f"model must be 1 or 2, got {self.model}")
        if not self.etas:
            raise ConfigError("etas must be non-empty")
        if not self.Ns or min(self.Ns) < 0:
            raise ConfigError("Ns must be non-empty with N >= 0")
        if not self.subdivisions or min(self.subdivisions) < 1:
            raise ConfigError("subdivisions must be non-empty with s >= 1")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.seed_base < 0:
            raise ConfigError("seed_base must be >= 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1 when set")
        if self.normalization not in diffeo.NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.model == 1:
            if self.coefficients is None:
                raise ConfigError("model 1 requires coefficients")
            fam = self.coefficients
        else:
            if self.diffeo is None or self.profile is None:
                raise ConfigError("model 2 requires diffeo and profile")
            fam = self.diffeo
        for eta in self.etas:
            if eta == 0.0:
                raise ConfigError("etas must be nonzero (residuals divide by eta^2)")
            fam.check_eta(eta)

    @property
    def dim(self) -> int:
        return self.coefficients.dim if self.model == 1 else self.diffeo.dim

    def effective_rtol(self) -> float:
        # small-eta sweeps tighten the solve so the eta^-2 amplification of
        # solver noise stays below the discretization-level residual
        if min(abs(e) for e in self.etas) ** 2 <= 1e-3:
            return min(self.rtol, 1e-11)
        return self.rtol

    def seeds(self) -> list[int]:
        return [self.seed_base + i for i in range(self.n_seeds)]


@dataclass
class EnsembleStats:
    """Per-grid-point aggregation over seeds.

    Matrices are componentwise statistics; ``max_abs_residual`` is the
    componentwise max over seeds of |residual entries|, the finite-sample
    proxy for the almost-sure bound.  Failed seeds are excluded from the
    statistics and listed in ``failures`` as (seed, message) pairs.
    """

    model: int
    eta: float
    N: int
    subdivisions: int
    h: float
    n_seeds: int
    a_per_star: np.ndarray
    mean_a_eta: np.ndarray
    se_a_eta: np.ndarray
    mean_a1: np.ndarray
    se_a1: np.ndarray
    mean_residual: np.ndarray
    se_residual: np.ndarray
    max_abs_residual: np.ndarray
    mean_z: float
    max_z: float
    mean_v: float
    max_v: float
    max_solver_residual: float
    failures: tuple = ()

    def residual_sup(self) -> float:
        return float(np.max(self.max_abs_residual))


# worker-local caches; values depend only on the key, so sharing across
# tasks cannot change results
_MESH_CACHE: dict = {}
_W0_CACHE: dict = {}


def _unit(dim: int, s: int):
    key = (dim, s)
    if key not in _MESH_CACHE:
        _MESH_CACHE[key] = build_unit_mesh(dim, s)
    return _MESH_CACHE[key]


def _meshes(dim: int, s: int, N: int):
    key = (dim, s, N)
    if key not in _MESH_CACHE:
        _MESH_CACHE[key] = replicate(_unit(dim, s), N)
    return _MESH_CACHE[key]


def _w0_and_per(spec: SweepSpec, s: int, rtol: float):
    key = (spec.coefficients, spec.diffeo, spec.profile, s, rtol, spec.max_iter)
    if key not in _W0_CACHE:
        unit = _unit(spec.dim, s)
        if spec.model == 1:
            fam = spec.coefficients
        else:
            fam = diffeo._background_family(spec.profile)
        w0s = additive.corrector_set_0(fam, unit, rtol, spec.max_iter)
        a_per_star = additive.homogenized_per(fam, unit, w0s)
        _W0_CACHE[key] = (w0s, a_per_star)
    return _W0_CACHE[key]


def _run_task(args):
    """One (N, s, seed) unit: solve shared correctors once, then all etas.

    Returns (N, s, seed, reports, failures) where each failure is
    (eta or None, message); None marks a shared-corrector failure that
    takes out every eta of this seed.
    """
    spec, N, s, seed = args
    rtol = spec.effective_rtol()
    mi = spec.max_iter
    try:
        mesh = _meshes(spec.dim, s, N)
        w0s, a_per_star = _w0_and_per(spec, s, rtol)
        r = make_realization(seed)
        if spec.model == 1:
            w1s = additive.corrector_set_1(spec.coefficients, r, mesh, w0s, rtol, mi)
        else:
            w1s = diffeo.corrector_set_1(
                spec.diffeo, spec.profile, r, mesh, w0s, rtol, mi
            )
    except Exception as exc:  # noqa: BLE001 - failures become data
        return N, s, seed, [], [(None, f"{type(exc).__name__}: {exc}")]

    reports = []
    failures = []
    for eta in spec.etas:
        try:
            if spec.model == 1:
                rep = additive.residual_report(
                    spec.coefficients, r, eta, mesh,
                    w0s=w0s, w1s=w1s, a_per_star=a_per_star,
                    seed=seed, rtol=rtol, max_iter=mi,
                )
            else:
                rep = diffeo.residual_report(
                    spec.diffeo, spec.profile, r, eta, mesh,
                    w0s=w0s, w1s=w1s, a_per_star=a_per_star,
                    seed=seed, rtol=rtol, max_iter=mi,
                    normalization=spec.normalization,
                )
            reports.append(rep)
        except Exception as exc:  # noqa: BLE001
            failures.append((eta, f"{type(exc).__name__}: {exc}"))
    return N, s, seed, reports, failures


def _aggregate(spec: SweepSpec, results) -> list[EnsembleStats]:
    by_point: dict = {}
    fail_by_point: dict = {}
    for N, s, seed, reports, failures in results:
        for rep in reports:
            by_point.setdefault((rep.eta, N, s), []).append(rep)
        for eta, msg in failures:
            affected = spec.etas if eta is None else (eta,)
            for e in affected:
                fail_by_point.setdefault((e, N, s), []).append((seed, msg))

    d = spec.dim
    nan_mat = np.full((d, d), np.nan)
    rows = []
    for N in spec.Ns:
        for s in spec.subdivisions:
            for eta in spec.etas:
                fails = tuple(fail_by_point.get((eta, N, s), ()))
                reps = by_point.get((eta, N, s), [])
                n = len(reps)
                if n == 0:
                    rows.append(
                        EnsembleStats(
                            model=spec.model, eta=eta, N=N, subdivisions=s,
                            h=1.0 / s, n_seeds=0,
                            a_per_star=nan_mat, mean_a_eta=nan_mat,
                            se_a_eta=nan_mat, mean_a1=nan_mat, se_a1=nan_mat,
                            mean_residual=nan_mat, se_residual=nan_mat,
                            max_abs_residual=nan_mat,
                            mean_z=np.nan, max_z=np.nan,
                            mean_v=np.nan, max_v=np.nan,
                            max_solver_residual=np.nan, failures=fails,
                        )
                    )
                    continue
                a_eta = np.stack([rp.a_eta_star for rp in reps])
                a1 = np.stack([rp.a1_star for rp in reps])
                res = np.stack([rp.residual_matrix for rp in reps])
                zs = np.array([rp.z_norm for rp in reps])
                vs = np.array([rp.v_norm for rp in reps])

                def se(stack):
                    if n == 1:
                        return np.zeros_like(stack[0])
                    return stack.std(axis=0, ddof=1) / np.sqrt(n)

                rows.append(
                    EnsembleStats(
                        model=spec.model, eta=eta, N=N, subdivisions=s,
                        h=1.0 / s, n_seeds=n,
                        a_per_star=reps[0].a_per_star,
                        mean_a_eta=a_eta.mean(axis=0), se_a_eta=se(a_eta),
                        mean_a1=a1.mean(axis=0), se_a1=se(a1),
                        mean_residual=res.mean(axis=0), se_residual=se(res),
                        max_abs_residual=np.abs(res).max(axis=0),
                        mean_z=float(zs.mean()), max_z=float(zs.max()),
                        mean_v=float(vs.mean()), max_v=float(vs.max()),
                        max_solver_residual=max(rp.max_solver_residual for rp in reps),
                        failures=fails,
                    )
                )
    return rows


def run_sweep(spec: SweepSpec, workers: int = 1, progress=None) -> list[EnsembleStats]:
    """Run the sweep and aggregate per grid point.

    Rows come back ordered by (N, subdivisions, eta) exactly as the spec
    lists them.  ``workers > 1`` distributes (N, s, seed) tasks over
    processes; the merge is by task order, so the output is identical to a
    serial run.  Per-seed solver failures are recorded in the affected rows
    without aborting the sweep.
    """
    spec.validate()
    tasks = [
        (spec, N, s, seed)
        for N in spec.Ns
        for s in spec.subdivisions
        for seed in spec.seeds()
    ]
    if workers <= 1:
        results = []
        for t in tasks:
            out = _run_task(t)
            results.append(out)
            if progress is not None:
                progress(out)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = []
            chunk = max(1, len(tasks) // (4 * workers))
            for out in pool.map(_run_task, tasks, chunksize=chunk):
                results.append(out)
                if progress is not None:
                    progress(out)
    return _aggregate(spec, results)


@dataclass
class LimitStudyRow:
    """Deviation of the first-order matrix from its large-N limit."""

    N: int
    subdivisions: int
    n_seeds: int
    mean_dev: float  # mean over seeds of max-abs entry deviation
    max_dev: float
    se_dev: float
    predicted_rate: float  # (2N+1)^(-d/2), normalized to the first N


def _limit_task(args):
    spec, N, s, seed = args
    rtol = spec.effective_rtol()
    mesh = _meshes(spec.dim, s, N)
    w0s, _ = _w0_and_per(spec, s, rtol)
    limit = additive.first_order_limit(spec.coefficients, _unit(spec.dim, s), w0s)
    r = make_realization(seed)
    w1s = additive.corrector_set_1(spec.coefficients, r, mesh, w0s, rtol, spec.max_iter)
    a1 = additive.homogenized_first_order(spec.coefficients, r, mesh, w0s, w1s)
    return N, s, seed, float(np.abs(a1 - limit).max())


def first_order_limit_study(spec: SweepSpec, workers: int = 1) -> list[LimitStudyRow]:
    """Monte Carlo deviations |A_1*(N, omega) - limit| across N (model 1).

    The limit matrix uses the same mesh size h as the supercell solves, so
    the deviation isolates the truncation fluctuation, which shrinks at the
    central-limit rate (2N+1)^(-d/2) for cellwise-independent draws.
    """
    spec.validate()
    if spec.model != 1:
        raise ConfigError("the first-order limit study applies to model 1")
    tasks = [
        (spec, N, s, seed)
        for N in spec.Ns
        for s in spec.subdivisions
        for seed in spec.seeds()
    ]
    if workers <= 1:
        results = [_limit_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_limit_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))

    d = spec.dim
    rows = []
    first_rate = None
    for N in spec.Ns:
        for s in spec.subdivisions:
            devs = np.array([dv for (n2, s2, _, dv) in results if n2 == N and s2 == s])
            rate = (2 * N + 1) ** (-d / 2.0)
            if first_rate is None:
                first_rate = rate
            n = devs.size
            rows.append(
                LimitStudyRow(
                    N=N, subdivisions=s, n_seeds=n,
                    mean_dev=float(devs.mean()),
                    max_dev=float(devs.max()),
                    se_dev=float(devs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                    predicted_rate=rate / first_rate,
                )
            )
    return rows


@dataclass
class RefinementRow:
    subdivisions: int
    h: float
    a_per_star: np.ndarray
    mean_residual_sup: float | None = None
    mean_z: float | None = None


@dataclass
class RefinementSummary:
    """Richardson extrapolation of the periodic matrix across mesh sizes.

    ``orders`` holds the observed convergence order per matrix entry;
    entries whose successive differences are below ``exact_tol`` are
    reported as order inf (the discrete solution is h-exact there, which
    happens for profiles aligned with the mesh).
    """

    rows: list
    extrapolated: np.ndarray
    orders: np.ndarray
    exact_tol: float
    residual_order: float | None = None
    z_order: float | None = None


def h_refinement_study(
    spec: SweepSpec, workers: int = 1, exact_tol: float = 1e-9
) -> RefinementSummary:
    """Convergence of A_per* (and optionally residual norms) as h -> 0.

    Requires at least three subdivision counts, each double the previous.
    """
    spec.validate()
    subs = list(spec.subdivisions)
    if len(subs) < 3:
        raise ConfigError("h refinement needs >= 3 subdivision counts")
    for a, b in zip(subs, subs[1:]):
        if b != 2 * a:
            raise ConfigError("subdivision counts must double: got " + repr(subs))

    rtol = spec.effective_rtol()
    rows = []
    with_residual = spec.model == 2 or (
        spec.coefficients is not None and spec.coefficients.amplitude > 0
    )
    for s in subs:
        _, a_per_star = _w0_and_per(spec, s, rtol)
        row = RefinementRow(subdivisions=s, h=1.0 / s, a_per_star=a_per_star)
        if with_residual:
            sub = SweepSpec(
                model=spec.model, etas=spec.etas, Ns=(spec.Ns[0],),
                subdivisions=(s,), n_seeds=spec.n_seeds, seed_base=spec.seed_base,
                coefficients=spec.coefficients, diffeo=spec.diffeo,
                profile=spec.profile, rtol=spec.rtol,
                normalization=spec.normalization,
            )
            stats = run_sweep(sub, workers=workers)
            row.mean_residual_sup = float(
                np.mean([st.residual_sup() for st in stats])
            )
            row.mean_z = float(np.mean([st.mean_z for st in stats]))
        rows.append(row)

    d = spec.dim
    a_last, a_mid, a_first = rows[-1].a_per_star, rows[-2].a_per_star, rows[-3].a_per_star
    e1 = np.abs(a_mid - a_first)
    e2 = np.abs(a_last - a_mid)
    scale = max(1.0, float(np.abs(a_last).max()))
    orders = np.full((d, d), np.inf)
    extrap = a_last.copy()
    for i in range(d):
        for j in range(d):
            if e1[i, j] <= exact_tol * scale and e2[i, j] <= exact_tol * scale:
                continue  # h-exact entry
            if e2[i, j] == 0.0:
                continue
            p = float(np.log2(e1[i, j] / e2[i, j]))
            orders[i, j] = p
            if p > 0:
                extrap[i, j] = a_last[i, j] + (a_last[i, j] - a_mid[i, j]) / (2**p - 1.0)

    def scalar_order(vals):
        v1, v2, v3 = vals[-3], vals[-2], vals[-1]
        e1s, e2s = abs(v2 - v1), abs(v3 - v2)
        if e1s <= exact_tol or e2s == 0.0:
            return np.inf
        return float(np.log2(e1s / e2s))

    res_order = z_order = None
    if with_residual:
        res_order = scalar_order([row.mean_residual_sup for row in rows])
        z_order = scalar_order([row.mean_z for row in rows])
    return RefinementSummary(
        rows=rows, extrapolated=extrap, orders=orders, exact_tol=exact_tol,
        residual_order=res_order, z_order=z_order,
    )


@dataclass
class BandVerdict:
    """Uniformity check: every grid point within a factor of the reference."""

    quantity: str
    reference: tuple
    reference_value: float
    worst_value: float
    worst_point: tuple
    factor: float
    passed: bool


def residual_band_check(
    rows: list[EnsembleStats],
    reference: tuple,
    factor: float = 4.0,
    quantity: str = "residual",
) -> BandVerdict:
    """Check max-over-seeds uniformity of the residual (or z norm) band.

    ``reference`` is the (eta, N, subdivisions) grid point whose value
    anchors the band; the check passes when every grid point's value is at
    most ``factor`` times the anchor.
    """
    ref_eta, ref_n, ref_s = reference
    ref_val = None
    worst_val = -np.inf
    worst_point = None
    for st in rows:
        val = st.residual_sup() if quantity == "residual" else st.max_z
        if (st.eta, st.N, st.subdivisions) == (ref_eta, ref_n, ref_s):
            ref_val = val
        if val > worst_val:
            worst_val = val
            worst_point = (st.eta, st.N, st.subdivisions)
    if ref_val is None:
        raise ConfigError(f"reference grid point {reference} not in sweep rows")
    return BandVerdict(
        quantity=quantity,
        reference=reference,
        reference_value=float(ref_val),
        worst_value=float(worst_val),
        worst_point=worst_point,
        factor=factor,
        passed=bool(worst_val <= factor * ref_val),
    )
