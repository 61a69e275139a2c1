"""Run configuration: TOML/JSON parsing, validation, canonical echo.

A config resolves every field (defaults filled in) and round-trips
losslessly: ``RunConfig.from_mapping(cfg.to_dict()) == cfg``.  Every
output JSON embeds the resolved dict, so a run can be reproduced from its
own summary file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from perthom import ensemble
from perthom.errors import ConfigError, FamilyValidityError
from perthom.fields import (
    AdditiveCoefficients,
    RandomDiffeomorphism,
    periodic_profile,
)

__all__ = ["RunConfig", "load_config_file"]


_SUITE_DEFAULTS = {
    "residual_band": False,
    "z_band": False,
    "band_factor": 4.0,
    "reference": (),  # (eta, N, s); empty = first of each grid list
    "limit_study": False,
    "limit_ratio": 0.5,
    "h_study": False,
    "h_order_min": 1.5,
}


def _section(data: dict, name: str, allowed: dict) -> dict:
    """Extract a config section, rejecting unknown keys by full path."""
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a table/object")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown config key {name}.{key}")
    out = dict(allowed)
    out.update(raw)
    return out


def _num(val, path: str, kind=float, positive=False, nonneg=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {val!r}")
    v = kind(val)
    if positive and v <= 0:
        raise ConfigError(f"{path}: must be > 0, got {val!r}")
    if nonneg and v < 0:
        raise ConfigError(f"{path}: must be >= 0, got {val!r}")
    return v


def _num_list(val, path: str, kind=float) -> tuple:
    if not isinstance(val, (list, tuple)) or not val:
        raise ConfigError(f"{path}: expected a non-empty list")
    return tuple(_num(v, path, kind) for v in val)


@dataclass
class RunConfig:
    """Fully resolved run settings; see the README for the file layout."""

    model: int = 1
    normalization: str = "volume-normalized"
    out: str = "."
    workers: int = 0  # 0 = number of CPUs
    profile_name: str = "checkerboard_2d"
    profile_params: dict = field(default_factory=lambda: {"a0": 1.0, "a1": 4.0})
    # model 1 family
    amplitude: float = 0.2
    mean_offset: float = 0.0
    remainder: str = "none"
    remainder_amplitude: float = 0.0
    eta_max: float = 0.5
    # model 2 deformation
    deformation_amplitude: float = 0.1
    theta_amplitude: float = 0.0
    # grids
    etas: tuple = (0.1,)
    Ns: tuple = (1,)
    subdivisions: tuple = (4,)
    seed_base: int = 0
    n_seeds: int = 1
    # solver
    rtol: float = 1e-10
    max_iter: int = 0  # 0 = automatic cap
    # single-solve settings (corrector / homogenize subcommands)
    single_eta: float = 0.1
    single_seed: int = 0
    single_N: int = 1
    single_subdivisions: int = 4
    direction: tuple = ()  # empty = first canonical basis vector
    suites: dict = field(default_factory=lambda: dict(_SUITE_DEFAULTS))

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a table/object")
        top_allowed = {
            "model", "normalization", "out", "workers",
            "profile", "family", "deformation", "grid", "seeds",
            "solver", "single", "suites",
        }
        for key in data:
            if key not in top_allowed:
                raise ConfigError(f"unknown config key {key}")

        model = data.get("model", 1)
        if model not in (1, 2):
            raise ConfigError(f"model: must be 1 or 2, got {model!r}")
        normalization = data.get("normalization", "volume-normalized")
        if normalization not in ("volume-normalized", "as-printed"):
            raise ConfigError(
                f"normalization: must be 'volume-normalized' or 'as-printed', "
                f"got {normalization!r}"
            )
        out = data.get("out", ".")
        if not isinstance(out, str):
            raise ConfigError("out: expected a string path")
        workers = data.get("workers", 0)
        if isinstance(workers, bool) or not isinstance(workers, int) or workers < 0:
            raise ConfigError(f"workers: expected an integer >= 0, got {workers!r}")

        prof_raw = data.get("profile", {"a0": 1.0, "a1": 4.0})
        if not isinstance(prof_raw, dict):
            raise ConfigError("profile: expected a table/object")
        prof = dict(prof_raw)
        name = prof.pop("name", "checkerboard_2d")
        if not isinstance(name, str):
            raise ConfigError("profile.name: expected a string")
        if "entries" in prof:
            prof["entries"] = list(
                _num_list(prof["entries"], "profile.entries")
            )

        fam = _section(data, "family", {
            "amplitude": 0.2, "mean_offset": 0.0, "remainder": "none",
            "remainder_amplitude": 0.0, "eta_max": 0.5,
        })
        if fam["remainder"] not in ("none", "quadratic"):
            raise ConfigError(
                f"family.remainder: must be 'none' or 'quadratic', "
                f"got {fam['remainder']!r}"
            )
        deform = _section(data, "deformation", {
            "amplitude": 0.1, "theta_amplitude": 0.0,
        })
        grid = _section(data, "grid", {
            "etas": [0.1], "Ns": [1], "subdivisions": [4],
        })
        seeds = _section(data, "seeds", {"base": 0, "count": 1})
        solver = _section(data, "solver", {"rtol": 1e-10, "max_iter": 0})
        single = _section(data, "single", {
            "eta": 0.1, "seed": 0, "N": 1, "subdivisions": 4, "direction": [],
        })
        suites = _section(data, "suites", _SUITE_DEFAULTS)
        for key in ("residual_band", "z_band", "limit_study", "h_study"):
            if not isinstance(suites[key], bool):
                raise ConfigError(f"suites.{key}: expected true/false")
        ref = suites["reference"]
        if not isinstance(ref, (list, tuple)) or (ref and len(ref) != 3):
            raise ConfigError("suites.reference: expected [eta, N, subdivisions]")

        direction = single["direction"]
        if direction:
            direction = _num_list(direction, "single.direction")

        return cls(
            model=model,
            normalization=normalization,
            out=out,
            workers=workers,
            profile_name=name,
            profile_params=prof,
            amplitude=_num(fam["amplitude"], "family.amplitude", nonneg=True),
            mean_offset=_num(fam["mean_offset"], "family.mean_offset"),
            remainder=fam["remainder"],
            remainder_amplitude=_num(
                fam["remainder_amplitude"], "family.remainder_amplitude", nonneg=True
            ),
            eta_max=_num(fam["eta_max"], "family.eta_max", positive=True),
            deformation_amplitude=_num(
                deform["amplitude"], "deformation.amplitude", nonneg=True
            ),
            theta_amplitude=_num(
                deform["theta_amplitude"], "deformation.theta_amplitude", nonneg=True
            ),
            etas=_num_list(grid["etas"], "grid.etas"),
            Ns=_num_list(grid["Ns"], "grid.Ns", kind=int),
            subdivisions=_num_list(grid["subdivisions"], "grid.subdivisions", kind=int),
            seed_base=_num(seeds["base"], "seeds.base", kind=int, nonneg=True),
            n_seeds=_num(seeds["count"], "seeds.count", kind=int, positive=True),
            rtol=_num(solver["rtol"], "solver.rtol", positive=True),
            max_iter=_num(solver["max_iter"], "solver.max_iter", kind=int, nonneg=True),
            single_eta=_num(single["eta"], "single.eta"),
            single_seed=_num(single["seed"], "single.seed", kind=int, nonneg=True),
            single_N=_num(single["N"], "single.N", kind=int, nonneg=True),
            single_subdivisions=_num(
                single["subdivisions"], "single.subdivisions", kind=int, positive=True
            ),
            direction=tuple(direction),
            suites={
                "residual_band": suites["residual_band"],
                "z_band": suites["z_band"],
                "band_factor": _num(suites["band_factor"], "suites.band_factor", positive=True),
                "reference": tuple(ref),
                "limit_study": suites["limit_study"],
                "limit_ratio": _num(suites["limit_ratio"], "suites.limit_ratio", positive=True),
                "h_study": suites["h_study"],
                "h_order_min": _num(suites["h_order_min"], "suites.h_order_min"),
            },
        )

    def to_dict(self) -> dict:
        """Canonical nested dict; from_mapping inverts it exactly."""
        return {
            "model": self.model,
            "normalization": self.normalization,
            "out": self.out,
            "workers": self.workers,
            "profile": {"name": self.profile_name, **self.profile_params},
            "family": {
                "amplitude": self.amplitude,
                "mean_offset": self.mean_offset,
                "remainder": self.remainder,
                "remainder_amplitude": self.remainder_amplitude,
                "eta_max": self.eta_max,
            },
            "deformation": {
                "amplitude": self.deformation_amplitude,
                "theta_amplitude": self.theta_amplitude,
            },
            "grid": {
                "etas": list(self.etas),
                "Ns": list(self.Ns),
                "subdivisions": list(self.subdivisions),
            },
            "seeds": {"base": self.seed_base, "count": self.n_seeds},
            "solver": {"rtol": self.rtol, "max_iter": self.max_iter},
            "single": {
                "eta": self.single_eta,
                "seed": self.single_seed,
                "N": self.single_N,
                "subdivisions": self.single_subdivisions,
                "direction": list(self.direction),
            },
            "suites": {
                "residual_band": self.suites["residual_band"],
                "z_band": self.suites["z_band"],
                "band_factor": self.suites["band_factor"],
                "reference": list(self.suites["reference"]),
                "limit_study": self.suites["limit_study"],
                "limit_ratio": self.suites["limit_ratio"],
                "h_study": self.suites["h_study"],
                "h_order_min": self.suites["h_order_min"],
            },
        }

    # family builders --------------------------------------------------------
    def build_profile(self):
        try:
            return periodic_profile(self.profile_name, **self.profile_params)
        except (FamilyValidityError, TypeError) as exc:
            raise ConfigError(f"profile: {exc}") from exc

    def build_coefficients(self) -> AdditiveCoefficients:
        try:
            return AdditiveCoefficients(
                profile=self.build_profile(),
                amplitude=self.amplitude,
                mean_offset=self.mean_offset,
                remainder=self.remainder,
                remainder_amplitude=self.remainder_amplitude,
                eta_max=self.eta_max,
            )
        except FamilyValidityError as exc:
            raise ConfigError(f"family: {exc}") from exc

    def build_diffeo(self) -> RandomDiffeomorphism:
        try:
            return RandomDiffeomorphism(
                dim=self.build_profile().dim,
                amplitude=self.deformation_amplitude,
                theta_amplitude=self.theta_amplitude,
                eta_max=self.eta_max,
            )
        except FamilyValidityError as exc:
            raise ConfigError(f"deformation: {exc}") from exc

    def build_sweep_spec(self) -> ensemble.SweepSpec:
        kwargs = dict(
            model=self.model,
            etas=self.etas,
            Ns=self.Ns,
            subdivisions=self.subdivisions,
            n_seeds=self.n_seeds,
            seed_base=self.seed_base,
            rtol=self.rtol,
            max_iter=self.max_iter or None,
            normalization=self.normalization,
        )
        if self.model == 1:
            kwargs["coefficients"] = self.build_coefficients()
        else:
            kwargs["profile"] = self.build_profile()
            kwargs["diffeo"] = self.build_diffeo()
        spec = ensemble.SweepSpec(**kwargs)
        try:
            spec.validate()
        except FamilyValidityError as exc:
            raise ConfigError(f"grid.etas: {exc}") from exc
        return spec

    def resolved_direction(self, dim: int) -> tuple:
        if not self.direction:
            return tuple(1.0 if i == 0 else 0.0 for i in range(dim))
        if len(self.direction) != dim:
            raise ConfigError(
                f"single.direction: expected {dim} components, "
                f"got {len(self.direction)}"
            )
        return self.direction


def load_config_file(path) -> RunConfig:
    """Parse a .toml or .json config file into a resolved RunConfig."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            try:
                data = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
    elif p.suffix == ".json":
        with open(p, "rb") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {p}: {exc}") from exc
        # summaries embed the config under "config"; accept them directly
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
    else:
        raise ConfigError(f"config file must be .toml or .json, got {p.suffix!r}")
    return RunConfig.from_mapping(data)
