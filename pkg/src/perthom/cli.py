"""Command-line front end: single solves, sweeps, validation suites.

Every command reads one config file (TOML, or the JSON echoed in a
previous summary), writes CSV/JSON artifacts into the output directory,
and embeds the fully resolved config in the JSON summary so the run can
be reproduced from its own output.  Exit codes: 0 success, 2 config
validation failure, 3 solver failure, 4 validation/acceptance suite
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from perthom import additive, diffeo, ensemble
from perthom.config import RunConfig, load_config_file
from perthom.errors import (
    CoercivityError,
    ConfigError,
    FamilyValidityError,
    SolverError,
)
from perthom.fields import ergodic_average, make_realization, stationarity_check
from perthom.mesh import build_unit_mesh, replicate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SUITE = 4
SCHEMA_VERSION = 1


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_summary(path: Path, command: str, cfg: RunConfig, payload: dict) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "config": cfg.to_dict(),
    }
    doc.update(_jsonable(payload))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _single_mesh(cfg: RunConfig, dim: int):
    return replicate(build_unit_mesh(dim, cfg.single_subdivisions), cfg.single_N)


def cmd_corrector(cfg: RunConfig) -> int:
    """Solve one supercell corrector and dump values + gradients."""
    out = _outdir(cfg)
    profile = cfg.build_profile()
    dim = profile.dim
    p = cfg.resolved_direction(dim)
    mesh = _single_mesh(cfg, dim)
    r = make_realization(cfg.single_seed)
    mi = cfg.max_iter or None
    if cfg.model == 1:
        fam = cfg.build_coefficients()
        sol = additive.solve_corrector_eta(
            fam, r, cfg.single_eta, mesh, p, cfg.rtol, mi
        )
    else:
        dif = cfg.build_diffeo()
        sol, _ = diffeo.solve_corrector_eta(
            dif, profile, r, cfg.single_eta, mesh, p, cfg.rtol, mi
        )

    _write_csv(
        out / "corrector_values.csv",
        ["dof", "value"],
        [[i, _fmt(v)] for i, v in enumerate(sol.field.values)],
    )
    grad_rows = [
        [t, c, _fmt(sol.gradients[t, c])]
        for t in range(mesh.n_cells)
        for c in range(dim)
    ]
    _write_csv(out / "corrector_gradients.csv", ["cell", "component", "value"], grad_rows)
    _write_summary(
        out / "corrector_summary.json",
        "corrector",
        cfg,
        {
            "eta": cfg.single_eta,
            "seed": cfg.single_seed,
            "N": cfg.single_N,
            "subdivisions": cfg.single_subdivisions,
            "direction": list(p),
            "solver_residual": sol.field.residual,
            "iterations": sol.field.iterations,
            "max_abs_gradient": float(np.abs(sol.gradients).max()),
        },
    )
    print(f"corrector: wrote {out}/corrector_*.{{csv,json}} "
          f"(residual {sol.field.residual:.3e}, {sol.field.iterations} iterations)")
    return EXIT_OK


def cmd_homogenize(cfg: RunConfig) -> int:
    """Homogenized matrices and the second-order residual at one point."""
    if cfg.single_eta == 0.0:
        raise ConfigError("single.eta: must be nonzero for homogenize")
    out = _outdir(cfg)
    profile = cfg.build_profile()
    mesh = _single_mesh(cfg, profile.dim)
    r = make_realization(cfg.single_seed)
    mi = cfg.max_iter or None
    if cfg.model == 1:
        rep = additive.residual_report(
            cfg.build_coefficients(), r, cfg.single_eta, mesh,
            seed=cfg.single_seed, rtol=cfg.rtol, max_iter=mi,
        )
    else:
        rep = diffeo.residual_report(
            cfg.build_diffeo(), profile, r, cfg.single_eta, mesh,
            seed=cfg.single_seed, rtol=cfg.rtol, max_iter=mi,
            normalization=cfg.normalization,
        )

    mats = [
        ("a_eta_star", rep.a_eta_star),
        ("a_per_star", rep.a_per_star),
        ("a1_star", rep.a1_star),
        ("residual", rep.residual_matrix),
    ]
    d = profile.dim
    rows = [
        [name, i, j, _fmt(m[i, j])]
        for name, m in mats
        for i in range(d)
        for j in range(d)
    ]
    _write_csv(out / "homogenized.csv", ["matrix", "i", "j", "value"], rows)
    _write_summary(
        out / "homogenize_summary.json",
        "homogenize",
        cfg,
        {
            "eta": rep.eta,
            "seed": rep.seed,
            "N": rep.N,
            "subdivisions": rep.subdivisions,
            "a_eta_star": rep.a_eta_star,
            "a_per_star": rep.a_per_star,
            "a1_star": rep.a1_star,
            "residual_matrix": rep.residual_matrix,
            "v_norm": rep.v_norm,
            "z_norm": rep.z_norm,
            "max_solver_residual": rep.max_solver_residual,
            "normalization": rep.normalization,
        },
    )
    print(f"homogenize: wrote {out}/homogenized.csv "
          f"(residual sup {rep.residual_max_norm():.4e}, z {rep.z_norm:.4e})")
    return EXIT_OK


_SWEEP_HEADER = [
    "model", "eta", "N", "subdivisions", "h", "i", "j", "n_seeds",
    "a_per_star", "mean_a_eta", "se_a_eta", "mean_a1", "se_a1",
    "mean_residual", "se_residual", "max_abs_residual",
    "mean_z", "max_z", "mean_v", "max_v", "max_solver_residual", "n_failures",
]


def _sweep_rows(stats: list) -> list:
    rows = []
    for st in stats:
        d = st.mean_a_eta.shape[0]
        for i in range(d):
            for j in range(d):
                rows.append([
                    st.model, _fmt(st.eta), st.N, st.subdivisions, _fmt(st.h),
                    i, j, st.n_seeds,
                    _fmt(st.a_per_star[i, j]),
                    _fmt(st.mean_a_eta[i, j]), _fmt(st.se_a_eta[i, j]),
                    _fmt(st.mean_a1[i, j]), _fmt(st.se_a1[i, j]),
                    _fmt(st.mean_residual[i, j]), _fmt(st.se_residual[i, j]),
                    _fmt(st.max_abs_residual[i, j]),
                    _fmt(st.mean_z), _fmt(st.max_z),
                    _fmt(st.mean_v), _fmt(st.max_v),
                    _fmt(st.max_solver_residual), len(st.failures),
                ])
    return rows


def _band_suite(stats, cfg: RunConfig, quantity: str) -> dict:
    ref = cfg.suites["reference"] or (cfg.etas[0], cfg.Ns[0], cfg.subdivisions[0])
    verdict = ensemble.residual_band_check(
        stats, tuple(ref), factor=cfg.suites["band_factor"], quantity=quantity
    )
    return {
        "passed": verdict.passed,
        "reference": list(verdict.reference),
        "reference_value": verdict.reference_value,
        "worst_value": verdict.worst_value,
        "worst_point": list(verdict.worst_point),
        "factor": verdict.factor,
    }


def cmd_sweep(cfg: RunConfig, workers: int) -> int:
    """Monte Carlo sweep plus any suites enabled in the config."""
    out = _outdir(cfg)
    spec = cfg.build_sweep_spec()

    def progress(task):
        N, s, seed, reports, failures = task
        tag = "ok" if not failures else f"{len(failures)} failure(s)"
        print(f"  task N={N} s={s} seed={seed}: {tag}", file=sys.stderr, flush=True)

    stats = ensemble.run_sweep(spec, workers=workers, progress=progress)
    _write_csv(out / "sweep.csv", _SWEEP_HEADER, _sweep_rows(stats))

    failures = [
        {"eta": st.eta, "N": st.N, "subdivisions": st.subdivisions,
         "seed": seed, "error": msg}
        for st in stats
        for seed, msg in st.failures
    ]
    suites: dict = {}
    artifacts = {"sweep": "sweep.csv"}

    if cfg.suites["residual_band"]:
        suites["residual_band"] = _band_suite(stats, cfg, "residual")
    if cfg.suites["z_band"]:
        suites["z_band"] = _band_suite(stats, cfg, "z")

    if cfg.suites["limit_study"]:
        if cfg.model != 1:
            raise ConfigError("suites.limit_study: requires model = 1")
        if len(cfg.Ns) < 2:
            raise ConfigError("suites.limit_study: needs at least two N values")
        lrows = ensemble.first_order_limit_study(spec, workers=workers)
        _write_csv(
            out / "limit_study.csv",
            ["N", "subdivisions", "n_seeds", "mean_dev", "max_dev",
             "se_dev", "predicted_rate"],
            [[r.N, r.subdivisions, r.n_seeds, _fmt(r.mean_dev), _fmt(r.max_dev),
              _fmt(r.se_dev), _fmt(r.predicted_rate)] for r in lrows],
        )
        artifacts["limit_study"] = "limit_study.csv"
        ratios = {}
        ok = True
        for s in cfg.subdivisions:
            per_s = [r for r in lrows if r.subdivisions == s]
            ratio = per_s[-1].mean_dev / per_s[0].mean_dev
            ratios[str(s)] = ratio
            ok = ok and ratio <= cfg.suites["limit_ratio"]
        suites["limit_study"] = {
            "passed": ok,
            "ratio_by_subdivisions": ratios,
            "limit_ratio": cfg.suites["limit_ratio"],
        }

    if cfg.suites["h_study"]:
        summary = ensemble.h_refinement_study(spec, workers=workers)
        d = summary.extrapolated.shape[0]
        hrows = []
        for row in summary.rows:
            for i in range(d):
                for j in range(d):
                    hrows.append([
                        row.subdivisions, _fmt(row.h), i, j,
                        _fmt(row.a_per_star[i, j]),
                        "" if row.mean_residual_sup is None else _fmt(row.mean_residual_sup),
                        "" if row.mean_z is None else _fmt(row.mean_z),
                    ])
        _write_csv(
            out / "h_study.csv",
            ["subdivisions", "h", "i", "j", "a_per_star",
             "mean_residual_sup", "mean_z"],
            hrows,
        )
        artifacts["h_study"] = "h_study.csv"
        finite = summary.orders[np.isfinite(summary.orders)]
        orders_ok = bool(finite.size == 0 or finite.min() >= cfg.suites["h_order_min"])
        suites["h_study"] = {
            "passed": orders_ok,
            "orders": summary.orders,
            "extrapolated": summary.extrapolated,
            "residual_order": summary.residual_order,
            "z_order": summary.z_order,
            "h_order_min": cfg.suites["h_order_min"],
        }

    enabled = [s for s in suites.values()]
    all_passed = all(s["passed"] for s in enabled) if enabled else None
    _write_summary(
        out / "sweep_summary.json",
        "sweep",
        cfg,
        {
            "artifacts": artifacts,
            "grid_points": len(stats),
            "failures": failures,
            "suites": suites,
            "all_passed": all_passed,
        },
    )
    print(f"sweep: {len(stats)} grid points, {len(failures)} failed solves, "
          f"wrote {out}/sweep.csv")
    for name, s in suites.items():
        print(f"  suite {name}: {'PASS' if s['passed'] else 'FAIL'}")
    if all_passed is False:
        return EXIT_SUITE
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    """Field-level checks: stationarity, ergodic averaging, deformation."""
    out = _outdir(cfg)
    profile = cfg.build_profile()
    dim = profile.dim
    r = make_realization(cfg.single_seed)
    suites: dict = {}

    # exact stationarity of the sampled fields under lattice shifts
    if cfg.model == 1:
        fam = cfg.build_coefficients()
        evaluator = lambda x, rr: fam.a_one(x, rr)  # noqa: E731
        scale = fam.amplitude
    else:
        dif = cfg.build_diffeo()
        evaluator = lambda x, rr: dif.displacement(x, rr)  # noqa: E731
        scale = dif.amplitude
    axis = np.linspace(-0.5, 0.5, 9, endpoint=False)
    if dim == 1:
        points = axis[:, None]
    else:
        g0, g1 = np.meshgrid(axis, axis, indexing="ij")
        points = np.stack([g0.ravel(), g1.ravel()], axis=1)
    shifts = [(3,) * dim, (-7,) * dim, tuple(2 + i for i in range(dim))]
    disc = max(stationarity_check(evaluator, r, k, points) for k in shifts)
    suites["stationarity"] = {
        "passed": bool(disc <= 1e-12 * max(scale, 1.0)),
        "max_discrepancy": disc,
    }

    # ergodic averaging toward the closed-form mean at CLT scale
    block = 7
    x0 = np.zeros((1, dim))
    if cfg.model == 1:
        avg = ergodic_average(
            lambda x, rr: fam.a_one(x, rr)[0, 0, 0], r, block, x0
        )
        expected = fam.amplitude * fam.mean_offset
        sd = fam.amplitude / np.sqrt(3.0)
    else:
        avg = ergodic_average(
            lambda x, rr: dif.displacement(x, rr)[0, 0], r, block, x0
        )
        expected = 0.0
        sd = dif.amplitude / np.sqrt(3.0)
    tol = 4.0 * sd / (2 * block + 1) ** (dim / 2.0) + 1e-15
    dev = float(abs(avg - expected))
    suites["ergodic_average"] = {
        "passed": bool(dev <= tol),
        "block": block,
        "deviation": dev,
        "tolerance": tol,
    }

    # deformation expansion: quadratic remainders and Jacobian window
    if cfg.model == 2:
        rows = diffeo.expansion_check(dif, r, cfg.etas)
        suites["expansion"] = {
            "passed": all(rw.quadratic_ok and rw.window_ok for rw in rows),
            "eta0": dif.eta0,
            "nu": dif.nu,
            "rows": [
                {
                    "eta": rw.eta,
                    "sup_gamma": rw.sup_gamma,
                    "sup_sigma": rw.sup_sigma,
                    "eig_lo": rw.eig_lo,
                    "eig_hi": rw.eig_hi,
                    "quadratic_ok": rw.quadratic_ok,
                    "window_ok": rw.window_ok,
                }
                for rw in rows
            ],
        }

    all_passed = all(s["passed"] for s in suites.values())
    _write_summary(
        out / "validate_summary.json",
        "validate",
        cfg,
        {"suites": suites, "all_passed": all_passed},
    )
    for name, s in suites.items():
        print(f"  suite {name}: {'PASS' if s['passed'] else 'FAIL'}")
    return EXIT_OK if all_passed else EXIT_SUITE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML config (or echoed JSON summary)")
    common.add_argument("--out", help="output directory (overrides config and PERTHOM_OUT)")
    common.add_argument("--workers", type=int, help="process count (overrides config and PERTHOM_WORKERS)")
    common.add_argument("--seed-base", type=int, dest="seed_base", help="override seeds.base")
    common.add_argument(
        "--normalization", choices=["volume-normalized", "as-printed"],
        help="deformed-matrix normalization variant (model 2)",
    )
    ap = argparse.ArgumentParser(
        prog="perthom",
        description="Supercell homogenization of randomly perturbed periodic media",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("corrector", parents=[common], help="solve one corrector and dump it")
    sub.add_parser("homogenize", parents=[common], help="matrices and residual at one grid point")
    sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over the (eta, N, h) grid")
    sub.add_parser("validate", parents=[common], help="field-level validation suites")
    return ap


def _apply_overrides(cfg: RunConfig, args, env) -> RunConfig:
    updates = {}
    if args.out is not None:
        updates["out"] = args.out
    elif "PERTHOM_OUT" in env:
        updates["out"] = env["PERTHOM_OUT"]
    if args.workers is not None:
        if args.workers < 0:
            raise ConfigError("workers: must be >= 0")
        updates["workers"] = args.workers
    elif "PERTHOM_WORKERS" in env:
        try:
            updates["workers"] = int(env["PERTHOM_WORKERS"])
        except ValueError as exc:
            raise ConfigError(f"PERTHOM_WORKERS: {env['PERTHOM_WORKERS']!r} is not an integer") from exc
        if updates["workers"] < 0:
            raise ConfigError("PERTHOM_WORKERS: must be >= 0")
    if args.seed_base is not None:
        if args.seed_base < 0:
            raise ConfigError("seed-base: must be >= 0")
        updates["seed_base"] = args.seed_base
    if args.normalization is not None:
        updates["normalization"] = args.normalization
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config_file(args.config)
        cfg = _apply_overrides(cfg, args, os.environ)
        workers = cfg.workers or os.cpu_count() or 1
        if args.command == "corrector":
            return cmd_corrector(cfg)
        if args.command == "homogenize":
            return cmd_homogenize(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, workers)
        return cmd_validate(cfg)
    except (ConfigError, FamilyValidityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CoercivityError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
