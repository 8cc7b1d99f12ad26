"""Config-driven experiment orchestration.

One YAML config file describes one experiment::

    kind: moran            # nonspatial-scaling | sde | spde | slfv |
                           # slfv-rescaled | duality-nonspatial |
                           # duality-lattice | moran
    seed: 12345
    replicates: 200        # Monte-Carlo replicates (kinds that use them)
    output: out/my-run     # optional; --out overrides
    params: { ... }        # kind-specific block, see _VALIDATORS

Kind-specific parameter blocks
------------------------------
nonspatial-scaling:
    levels (list of int), alpha in (0,1/4), impact, selection, p0,
    horizon, em_dt (oracle step, default 1e-4)
sde:
    impact, selection, dt, p0, horizon
spde:
    domain {dimension, length, cells}, kernel (see below), impact,
    selection, radius, dt, horizon, record_dt, include_white_noise,
    initial {kind: constant|bump, ...}
slfv:
    domain, kernel, radius, impact, selection, env_rate,
    rate_per_volume, horizon, record_dt, initial, tracer_fraction
    (optional), log_events
slfv-rescaled:
    domain, kernel, levels (list), alpha in (0,1/6), impact, selection,
    radius, horizon, initial, test_width
duality-nonspatial:
    impacts (list), selections (list), x0s (list), n0, horizon, dt
duality-lattice:
    sites, x0, occupancy (list), impact, selection, gamma or radius,
    delta, horizon, dt
moran:
    demes, deme_size, selection, env_rate, migration, scenario (name or
    list of names; list = shared-seed sweep), horizon, p0, init,
    record_every or record_dt, log_events, stop_on_fixation

kernel blocks: {kind: block, n_blocks, rho} |
               {kind: gaussian-sign, length_scale} |
               {kind: white-lattice}

Scenario sweeps share the master seed (the comparability device); list-
valued numeric sweeps derive child seeds as seed + index.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import core, duals, gridio, limits, moran, nonspatial, slfv
from .errors import ConfigError, FlucselError

_KINDS = (
    "nonspatial-scaling",
    "sde",
    "spde",
    "slfv",
    "slfv-rescaled",
    "duality-nonspatial",
    "duality-lattice",
    "moran",
)


@dataclass
class ExperimentSpec:
    kind: str
    seed: int
    replicates: int
    output: Optional[str]
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_keys(block: dict, allowed: set, errors: list, where: str) -> None:
    for key in block:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r} (allowed: {sorted(allowed)})")


def _need(block, key, errors, where, types=(int, float), cond=None, msg=""):
    if key not in block:
        errors.append(f"{where}: missing required key {key!r}")
        return None
    val = block[key]
    if types and not isinstance(val, types):
        errors.append(f"{where}: {key} must be of type {types}, got {type(val).__name__}")
        return None
    if cond is not None and not cond(val):
        errors.append(f"{where}: {key}={val!r} out of range ({msg})")
        return None
    return val


def _validate_domain(block, errors) -> Optional[core.SpatialDomain]:
    if not isinstance(block, dict):
        errors.append("params.domain: must be a mapping {dimension, length, cells}")
        return None
    _check_keys(block, {"dimension", "length", "cells"}, errors, "params.domain")
    d = _need(block, "dimension", errors, "params.domain", (int,), lambda v: v in (1, 2), "1 or 2")
    length = _need(block, "length", errors, "params.domain", (int, float), lambda v: v > 0, "> 0")
    cells = _need(block, "cells", errors, "params.domain", (int,), lambda v: v >= 1, ">= 1")
    if None in (d, length, cells):
        return None
    return core.SpatialDomain(d, float(length), float(length) / cells)


def _validate_kernel(block, domain, errors) -> Optional[core.EnvironmentKernel]:
    if not isinstance(block, dict):
        errors.append("params.kernel: must be a mapping with a 'kind' key")
        return None
    kind = block.get("kind")
    if kind == "block":
        _check_keys(block, {"kind", "n_blocks", "rho"}, errors, "params.kernel")
        if domain is None:
            return None
        try:
            return core.block_kernel(domain, int(block.get("n_blocks", 2)),
                                     float(block.get("rho", 1.0)))
        except FlucselError as exc:
            errors.append(f"params.kernel: {exc}")
    elif kind == "gaussian-sign":
        _check_keys(block, {"kind", "length_scale", "underlying"}, errors, "params.kernel")
        if domain is None:
            return None
        try:
            return core.gaussian_sign_kernel(
                domain, float(block.get("length_scale", 1.0)),
                block.get("underlying", "squared-exponential"),
            )
        except FlucselError as exc:
            errors.append(f"params.kernel: {exc}")
    elif kind == "white-lattice":
        _check_keys(block, {"kind"}, errors, "params.kernel")
        if domain is not None:
            return core.white_lattice_kernel(domain)
    else:
        errors.append(
            f"params.kernel: unknown kind {kind!r} "
            "(block | gaussian-sign | white-lattice)"
        )
    return None


def _initial_field(block, domain) -> np.ndarray:
    block = block or {"kind": "constant", "value": 0.5}
    kind = block.get("kind", "constant")
    if kind == "constant":
        return np.full(domain.grid_shape, float(block.get("value", 0.5)))
    if kind == "bump":
        base = float(block.get("base", 0.0))
        amp = float(block.get("amplitude", 0.5))
        width = float(block.get("width", domain.length / 8.0))
        centre = float(block.get("centre", domain.length / 2.0))
        k = domain.cells_per_side
        axis = (np.arange(k) + 0.5) * domain.h
        delta = np.abs(axis - centre)
        delta = np.minimum(delta, domain.length - delta)
        if domain.dimension == 1:
            r2 = delta ** 2
        else:
            r2 = delta[:, None] ** 2 + delta[None, :] ** 2
        return np.clip(base + amp * np.exp(-r2 / (2.0 * width ** 2)), 0.0, 1.0)
    raise ConfigError(f"params.initial: unknown kind {kind!r} (constant | bump)")


def _radial_bump(domain, width) -> np.ndarray:
    k = domain.cells_per_side
    axis = (np.arange(k) + 0.5) * domain.h
    delta = np.abs(axis - domain.length / 2.0)
    delta = np.minimum(delta, domain.length - delta)
    if domain.dimension == 1:
        r2 = delta ** 2
    else:
        r2 = delta[:, None] ** 2 + delta[None, :] ** 2
    return np.exp(-r2 / (2.0 * width ** 2))


def _as_list(val):
    return val if isinstance(val, list) else [val]


def parse_config(path) -> ExperimentSpec:
    """Parse and fully validate a config file; raises ConfigError listing
    every violation, not just the first."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    errors: list = []
    _check_keys(raw, {"kind", "seed", "replicates", "output", "params"}, errors, "top level")
    kind = raw.get("kind")
    if kind not in _KINDS:
        errors.append(f"kind={kind!r} is not one of {_KINDS}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append(f"seed must be an integer, got {seed!r}")
        seed = 0
    replicates = raw.get("replicates", 1)
    if not isinstance(replicates, int) or replicates < 1:
        errors.append(f"replicates must be a positive integer, got {replicates!r}")
        replicates = 1
    params = raw.get("params", {})
    if not isinstance(params, dict):
        errors.append("params must be a mapping")
        params = {}
    if kind in _KINDS:
        _VALIDATORS[kind](params, replicates, errors)
    if errors:
        raise ConfigError(
            f"{path}: {len(errors)} validation error(s):\n  - " + "\n  - ".join(errors)
        )
    return ExperimentSpec(kind, seed, replicates, raw.get("output"), params)


def _v_nonspatial_scaling(p, replicates, errors):
    _check_keys(p, {"levels", "alpha", "impact", "selection", "p0", "horizon", "em_dt"},
                errors, "params")
    alpha = _need(p, "alpha", errors, "params", (int, float),
                  lambda v: 0 < v < 0.25, "alpha must be in (0, 1/4)")
    _need(p, "impact", errors, "params", (int, float), lambda v: 0 < v <= 1, "(0,1]")
    _need(p, "selection", errors, "params", (int, float), lambda v: 0 <= v <= 1, "[0,1]")
    _need(p, "p0", errors, "params", (int, float), lambda v: 0 <= v <= 1, "[0,1]")
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    levels = p.get("levels")
    if not (isinstance(levels, list) and levels and all(isinstance(n, int) and n >= 1 for n in levels)):
        errors.append("params.levels must be a non-empty list of integers >= 1")
        return
    if alpha is not None and "impact" in p and "selection" in p:
        for n in levels:
            try:
                nonspatial.ScalingSchedule(n, float(alpha), float(p["impact"]),
                                           float(p["selection"]))
            except ConfigError as exc:
                errors.append(f"params.levels: level {n}: {exc}")


def _v_sde(p, replicates, errors):
    _check_keys(p, {"impact", "selection", "dt", "p0", "horizon"}, errors, "params")
    _need(p, "impact", errors, "params", (int, float), lambda v: 0 < v <= 1, "(0,1]")
    _need(p, "selection", errors, "params", (int, float), lambda v: v >= 0, ">= 0")
    _need(p, "p0", errors, "params", (int, float), lambda v: 0 <= v <= 1, "[0,1]")
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    if "dt" in p:
        _need(p, "dt", errors, "params", (int, float), lambda v: v > 0, "> 0")


def _v_spde(p, replicates, errors):
    _check_keys(p, {"domain", "kernel", "impact", "selection", "radius", "dt",
                    "horizon", "record_dt", "include_white_noise", "initial"},
                errors, "params")
    domain = _validate_domain(p.get("domain", None) or {}, errors)
    kernel = _validate_kernel(p.get("kernel", None) or {}, domain, errors)
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    if domain is not None and kernel is not None:
        try:
            limits.SpdeParams(
                domain=domain,
                impact=float(p.get("impact", 0.0)),
                selection=float(p.get("selection", -1.0)),
                radius=float(p.get("radius", 0.0)),
                kernel=kernel,
                dt=float(p.get("dt", 0.0)),
                include_white_noise=bool(p.get("include_white_noise", False)),
            )
        except (ConfigError, TypeError, ValueError) as exc:
            errors.append(f"params: {exc}")


def _v_slfv(p, replicates, errors):
    _check_keys(p, {"domain", "kernel", "radius", "impact", "selection", "env_rate",
                    "rate_per_volume", "horizon", "record_dt", "initial",
                    "tracer_fraction", "log_events"}, errors, "params")
    domain = _validate_domain(p.get("domain", None) or {}, errors)
    kernel = _validate_kernel(p.get("kernel", None) or {}, domain, errors)
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    _need(p, "record_dt", errors, "params", (int, float), lambda v: v > 0, "> 0")
    if "tracer_fraction" in p:
        _need(p, "tracer_fraction", errors, "params", (int, float),
              lambda v: 0 <= v <= 1, "[0,1]")
    if domain is not None and kernel is not None:
        try:
            slfv.SlfvParams(
                domain=domain,
                radius=float(p.get("radius", 0.0)),
                impact=float(p.get("impact", 0.0)),
                selection=float(p.get("selection", -1.0)),
                kernel=kernel,
                env_rate=float(p.get("env_rate", -1.0)),
                rate_per_volume=float(p.get("rate_per_volume", 1.0)),
            )
        except (ConfigError, TypeError, ValueError) as exc:
            errors.append(f"params: {exc}")


def _v_slfv_rescaled(p, replicates, errors):
    _check_keys(p, {"domain", "kernel", "levels", "alpha", "impact", "selection",
                    "radius", "horizon", "initial", "test_width"}, errors, "params")
    domain = _validate_domain(p.get("domain", None) or {}, errors)
    kernel = _validate_kernel(p.get("kernel", None) or {}, domain, errors)
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    alpha = _need(p, "alpha", errors, "params", (int, float),
                  lambda v: 0 < v < 1.0 / 6.0, "alpha must be in (0, 1/6)")
    levels = p.get("levels")
    if not (isinstance(levels, list) and levels and all(isinstance(n, int) and n >= 1 for n in levels)):
        errors.append("params.levels must be a non-empty list of integers >= 1")
        return
    if alpha is None or domain is None or kernel is None:
        return
    for n in levels:
        try:
            spec = slfv.RescaleSpec(n, float(alpha), float(p.get("impact", 0.0)),
                                    float(p.get("selection", 0.0)),
                                    float(p.get("radius", 0.0)))
            spec.params(domain, kernel)
        except ConfigError as exc:
            errors.append(f"params.levels: level {n}: {exc}")


def _v_duality_nonspatial(p, replicates, errors):
    _check_keys(p, {"impacts", "selections", "x0s", "n0", "horizon", "dt"},
                errors, "params")
    _need(p, "n0", errors, "params", (int,), lambda v: v >= 0, ">= 0")
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    for key in ("impacts", "selections", "x0s"):
        vals = p.get(key)
        if not (isinstance(vals, list) and vals):
            errors.append(f"params.{key} must be a non-empty list")
        elif key == "x0s" and not all(-1 <= v <= 1 for v in vals):
            errors.append("params.x0s values must lie in [-1, 1]")


def _v_duality_lattice(p, replicates, errors):
    _check_keys(p, {"sites", "x0", "occupancy", "impact", "selection", "gamma",
                    "radius", "delta", "horizon", "dt"}, errors, "params")
    sites = _need(p, "sites", errors, "params", (int,),
                  lambda v: 1 <= v <= 16, "desk-scale: 1..16 sites")
    _need(p, "horizon", errors, "params", (int, float), lambda v: v > 0, "> 0")
    occupancy = p.get("occupancy")
    if not (isinstance(occupancy, list) and all(isinstance(c, int) and c >= 0 for c in occupancy)):
        errors.append("params.occupancy must be a list of non-negative integers")
    elif sites is not None and len(occupancy) != sites:
        errors.append("params.occupancy length must equal params.sites")
    if "gamma" not in p and "radius" not in p:
        errors.append("params: provide either gamma or radius (gamma = gamma_r(radius, 1))")


def _v_moran(p, replicates, errors):
    _check_keys(p, {"demes", "deme_size", "selection", "env_rate", "migration",
                    "scenario", "horizon", "p0", "init", "record_every",
                    "record_dt", "log_events", "stop_on_fixation", "max_events"},
                errors, "params")
    scenarios = _as_list(p.get("scenario", "neutral"))
    for sc in scenarios:
        if sc not in moran.SCENARIOS:
            errors.append(f"params.scenario: {sc!r} not in {moran.SCENARIOS}")
    try:
        _moran_config(p, scenarios[0] if scenarios else "neutral")
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"params: {exc}")


_VALIDATORS = {
    "nonspatial-scaling": _v_nonspatial_scaling,
    "sde": _v_sde,
    "spde": _v_spde,
    "slfv": _v_slfv,
    "slfv-rescaled": _v_slfv_rescaled,
    "duality-nonspatial": _v_duality_nonspatial,
    "duality-lattice": _v_duality_lattice,
    "moran": _v_moran,
}


def _moran_config(p, scenario) -> moran.MoranConfig:
    return moran.MoranConfig(
        demes=p.get("demes", 0),
        deme_size=p.get("deme_size", 0),
        selection=float(p.get("selection", -1.0)),
        env_rate=float(p.get("env_rate", -1.0)),
        migration=float(p.get("migration", -1.0)),
        scenario=scenario,
        horizon=p.get("horizon"),
        p0=float(p.get("p0", 0.5)),
        init=p.get("init", "bernoulli"),
        record_every=int(p.get("record_every", 0)),
        record_dt=float(p.get("record_dt", 0.0)),
        log_events=bool(p.get("log_events", False)),
        stop_on_fixation=bool(p.get("stop_on_fixation", False)),
        max_events=p.get("max_events"),
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (int, float, np.floating)) else x
                             for x in row])


def _mean_var_rows(samples) -> list:
    m = float(np.mean(samples))
    v = float(np.var(samples, ddof=1))
    se_m = float(np.std(samples, ddof=1) / np.sqrt(len(samples)))
    m4 = float(np.mean((samples - m) ** 4))
    se_v = float(np.sqrt(max(m4 - v * v, 0.0) / len(samples)))
    return [m, se_m, v, se_v]


def _run_nonspatial_scaling(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    rows = []
    for i, n in enumerate(p["levels"]):
        schedule = nonspatial.ScalingSchedule(n, p["alpha"], p["impact"], p["selection"])
        samples = nonspatial.run_rescaled(
            schedule, p["p0"], p["horizon"], spec.replicates,
            core.RngContract(spec.seed + i),
        )
        rows.append([n] + _mean_var_rows(samples))
    em = limits.run_sde(
        limits.DiffusionParams(p["impact"], p["selection"], p.get("em_dt", 1e-4)),
        p["p0"], p["horizon"], spec.replicates, core.RngContract(spec.seed + len(p["levels"])),
    )[0]
    _write_csv(out / "scaling_moments.csv",
               ["level", "mean", "mean_se", "var", "var_se"], rows)
    _write_csv(out / "em_moments.csv",
               ["mean", "mean_se", "var", "var_se"], [_mean_var_rows(em)])


def _run_sde(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    params = limits.DiffusionParams(p["impact"], p["selection"], p.get("dt", 1e-3))
    samples, counter = limits.run_sde(params, p["p0"], p["horizon"], spec.replicates,
                                      core.RngContract(spec.seed))
    _write_csv(out / "samples.csv", ["p"], [[x] for x in samples])
    _write_csv(out / "summary.csv",
               ["mean", "mean_se", "var", "var_se", "clamp_frequency"],
               [_mean_var_rows(samples) + [counter.frequency]])


def _spde_params(p) -> limits.SpdeParams:
    domain = _validate_domain(p["domain"], [])
    kernel = _validate_kernel(p["kernel"], domain, [])
    return limits.SpdeParams(
        domain=domain, impact=p["impact"], selection=p["selection"],
        radius=p["radius"], kernel=kernel, dt=p["dt"],
        include_white_noise=bool(p.get("include_white_noise", False)),
    )


def _run_spde(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    params = _spde_params(p)
    w0 = _initial_field(p.get("initial"), params.domain)
    times, snaps, counter = limits.run_spde(
        params, w0, p["horizon"], p.get("record_dt", p["horizon"]),
        core.RngContract(spec.seed),
    )
    gridio.write_field_csv(out / "fields.csv", times, snaps)
    gridio.write_field_binary(out / "final.bin", params.domain.dimension,
                              times[-1], snaps[-1])
    _write_csv(out / "summary.csv", ["clamps", "cell_steps", "clamp_frequency"],
               [[counter.clamps, counter.cell_steps, counter.frequency]])


def _run_slfv(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    domain = _validate_domain(p["domain"], [])
    kernel = _validate_kernel(p["kernel"], domain, [])
    params = slfv.SlfvParams(
        domain=domain, radius=p["radius"], impact=p["impact"],
        selection=p["selection"], kernel=kernel, env_rate=p["env_rate"],
        rate_per_volume=p.get("rate_per_volume", 1.0),
    )
    contract = core.RngContract(spec.seed)
    w0 = _initial_field(p.get("initial"), domain)
    v0 = None
    if "tracer_fraction" in p:
        v0 = w0 * float(p["tracer_fraction"])
    env0 = core.sample_environment(kernel, contract.stream("init"))
    state = slfv.SlfvState(w0, env0, v0)
    run = slfv.run_slfv(params, state, p["horizon"], p["record_dt"], contract)
    gridio.write_field_csv(out / "fields.csv", run.times, run.w)
    if run.v is not None:
        gridio.write_field_csv(out / "tracer_fields.csv", run.times, run.v)
    if p.get("log_events", False):
        gridio.write_event_log_csv(out / "events.csv", run)


def _run_slfv_rescaled(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    domain = _validate_domain(p["domain"], [])
    kernel = _validate_kernel(p["kernel"], domain, [])
    w0 = _initial_field(p.get("initial"), domain)
    f = _radial_bump(domain, p.get("test_width", domain.length / 4.0))
    rows = []
    for i, n in enumerate(p["levels"]):
        rspec = slfv.RescaleSpec(n, p["alpha"], p["impact"], p["selection"], p["radius"])
        _, vals = slfv.run_rescaled_slfv(
            rspec, domain, kernel, w0, p["horizon"], spec.replicates, [f],
            core.RngContract(spec.seed + i),
        )
        final = vals[:, -1, 0]
        rows.append([n, float(np.mean(final)), float(np.var(final, ddof=1))])
    _write_csv(out / "rescaled_stats.csv", ["level", "mean", "variance"], rows)


def _run_duality_nonspatial(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    reports = []
    idx = 0
    for u in p["impacts"]:
        for s in p["selections"]:
            for x0 in p["x0s"]:
                reports.append(duals.duality_check_nonspatial(
                    x0, p["n0"], u, s, p["horizon"], spec.replicates,
                    core.RngContract(spec.seed + idx), dt=p.get("dt", 1e-4),
                ))
                idx += 1
    duals.write_duality_csv(out / "duality_report.csv", reports)
    if not all(r.passed for r in reports):
        raise FlucselError("duality check failed at 3 combined standard errors")


def _run_duality_lattice(spec: ExperimentSpec, out: Path) -> None:
    p = spec.params
    gamma = p.get("gamma")
    if gamma is None:
        gamma = limits.gamma_r(p["radius"], 1)
    x0 = np.full(p["sites"], float(p["x0"])) if np.isscalar(p["x0"]) else np.asarray(p["x0"], float)
    report = duals.duality_check_lattice(
        x0, np.asarray(p["occupancy"], dtype=np.int64), p["impact"], p["selection"],
        gamma, p.get("delta", 1.0), p["horizon"], spec.replicates,
        core.RngContract(spec.seed), dt=p.get("dt", 1e-4),
    )
    duals.write_duality_csv(out / "duality_report.csv", [report])
    if not report.passed:
        raise FlucselError("lattice duality check failed at 3 combined standard errors")


def _run_moran_child(args) -> list:
    params, scenario, seed, out_dir = args
    config = _moran_config(params, scenario)
    result = moran.run_experiment(config, core.RngContract(seed))
    return [str(p) for p in moran.write_records(result, out_dir)]


def _run_moran(spec: ExperimentSpec, out: Path, workers: int = 1) -> None:
    p = spec.params
    scenarios = _as_list(p.get("scenario", "neutral"))
    jobs = []
    for scenario in scenarios:
        child_out = out / scenario if len(scenarios) > 1 else out
        # scenario sweeps share the master seed: comparability by construction
        jobs.append((p, scenario, spec.seed, str(child_out)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_moran_child, jobs))
    else:
        for job in jobs:
            _run_moran_child(job)


_RUNNERS = {
    "nonspatial-scaling": _run_nonspatial_scaling,
    "sde": _run_sde,
    "spde": _run_spde,
    "slfv": _run_slfv,
    "slfv-rescaled": _run_slfv_rescaled,
    "duality-nonspatial": _run_duality_nonspatial,
    "duality-lattice": _run_duality_lattice,
}


def run(spec: ExperimentSpec, out_dir=None, workers: int = 1) -> Path:
    """Execute the experiment, write artefacts plus a checksum manifest,
    and return the manifest path."""
    out = Path(out_dir or spec.output or f"out/{spec.kind}")
    out.mkdir(parents=True, exist_ok=True)
    if spec.kind == "moran":
        _run_moran(spec, out, workers)
    else:
        _RUNNERS[spec.kind](spec, out)
    manifest = out / "manifest.txt"
    lines = []
    for path in sorted(q for q in out.rglob("*") if q.is_file() and q != manifest):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{digest}  {path.relative_to(out)}")
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Verification batteries (quick kind-relevant invariant checks)
# ---------------------------------------------------------------------------


def _verify_checks(spec: ExperimentSpec) -> list:
    checks = []
    seed = spec.seed

    def ok(name, passed, detail=""):
        checks.append((name, bool(passed), detail))

    if spec.kind in ("sde", "nonspatial-scaling"):
        params = limits.DiffusionParams(0.8, 0.9, 1e-3)
        samples, _ = limits.run_sde(params, 0.3, 0.5, 4000, core.RngContract(seed))
        ok("diffusion stays in [0,1]", np.all((samples >= 0) & (samples <= 1)))
        zero, _ = limits.run_sde(params, 0.0, 0.5, 64, core.RngContract(seed + 1))
        ok("p = 0 absorbing", np.all(zero == 0.0))
    if spec.kind == "nonspatial-scaling":
        sched = nonspatial.ScalingSchedule(200, spec.params["alpha"],
                                           spec.params["impact"], 0.0)
        samples = nonspatial.run_rescaled(sched, 0.4, 0.5, 4000, core.RngContract(seed + 2))
        z = abs(np.mean(samples) - 0.4) / (np.std(samples, ddof=1) / np.sqrt(len(samples)))
        ok("neutral martingale (s = 0)", z <= 3, f"z = {z:.2f}")
        again = nonspatial.run_rescaled(sched, 0.4, 0.5, 4000, core.RngContract(seed + 2))
        ok("determinism under equal seeds", np.array_equal(samples, again))
    if spec.kind == "spde":
        params = _spde_params(spec.params)
        if params.selection > 0:
            neutral = limits.SpdeParams(params.domain, params.impact, 0.0, params.radius,
                                        params.kernel, params.dt)
        else:
            neutral = params
        w = _initial_field(spec.params.get("initial"), params.domain)
        contract = core.RngContract(seed)
        env, drift = contract.stream("environment"), contract.stream("outcomes")
        mass0 = np.sum(w) * params.domain.h ** params.domain.dimension
        drift_max = 0.0
        for _ in range(20):
            prev = np.sum(w)
            w = limits.spde_step(w, neutral, env, drift)
            drift_max = max(drift_max, abs(np.sum(w) - prev) * params.domain.h ** params.domain.dimension)
        ok("heat-flow mass conservation (s = 0)", drift_max <= 1e-10,
           f"max per-step drift {drift_max:.2e} of mass {mass0:.3f}")
        ones = np.ones(params.domain.grid_shape)
        stepped = limits.spde_step(ones, params, contract.stream("environment"),
                                   contract.stream("outcomes"))
        ok("fixation state w = 1 invariant", np.all(stepped == 1.0))
    if spec.kind in ("slfv", "slfv-rescaled"):
        domain = _validate_domain(spec.params["domain"], [])
        kernel = _validate_kernel(spec.params["kernel"], domain, [])
        radius = spec.params["radius"]
        if spec.kind == "slfv-rescaled":
            rspec = slfv.RescaleSpec(spec.params["levels"][0], spec.params["alpha"],
                                     spec.params["impact"], spec.params["selection"],
                                     radius)
            params = rspec.params(domain, kernel)
        else:
            params = slfv.SlfvParams(domain=domain, radius=radius,
                                     impact=spec.params["impact"],
                                     selection=spec.params["selection"], kernel=kernel,
                                     env_rate=spec.params["env_rate"],
                                     rate_per_volume=spec.params.get("rate_per_volume", 1.0))
        contract = core.RngContract(seed)
        env0 = core.sample_environment(kernel, contract.stream("init"))
        state = slfv.SlfvState(np.full(domain.grid_shape, 0.5), env0,
                               np.full(domain.grid_shape, 0.25))
        run_ = slfv.run_slfv(params, state, 0.5, 0.5, contract)
        w, v = run_.final.w, run_.final.v
        ok("cellwise 0 <= v <= w <= 1",
           np.all(v >= 0) and np.all(v <= w + 1e-12) and np.all(w <= 1))
        ones = slfv.SlfvState(np.ones(domain.grid_shape), env0)
        fixed = slfv.run_slfv(params, ones, 0.3, 0.3, core.RngContract(seed + 3))
        ok("fixed state w = 1 absorbing", np.all(fixed.final.w == 1.0))
    if spec.kind == "duality-nonspatial":
        rep = duals.duality_check_nonspatial(
            spec.params["x0s"][0], spec.params["n0"], spec.params["impacts"][0],
            spec.params["selections"][0], spec.params["horizon"],
            min(spec.replicates, 20_000), core.RngContract(seed), dt=2e-4)
        ok("two-sided duality agreement", rep.passed, f"z = {rep.z_score:.2f}")
        counts = duals.run_jump_dual(4, 1.0, 1.0, 10.0, 2000, core.RngContract(seed + 1))
        ok("dual parity N = N0 mod 2", np.all(counts % 2 == 0))
    if spec.kind == "duality-lattice":
        gamma = spec.params.get("gamma") or limits.gamma_r(spec.params["radius"], 1)
        x0 = np.full(spec.params["sites"], float(spec.params["x0"]))
        rep = duals.duality_check_lattice(
            x0, np.asarray(spec.params["occupancy"], dtype=np.int64),
            spec.params["impact"], spec.params["selection"], gamma,
            spec.params.get("delta", 1.0), spec.params["horizon"],
            min(spec.replicates, 20_000), core.RngContract(seed), dt=2e-4)
        ok("lattice duality agreement", rep.passed, f"z = {rep.z_score:.2f}")
    if spec.kind == "moran":
        scenarios = _as_list(spec.params.get("scenario", "neutral"))
        config = _moran_config({**spec.params, "horizon": min(spec.params.get("horizon") or 1.0, 1.0),
                                "record_every": 0, "record_dt": 0.0,
                                "log_events": True, "stop_on_fixation": False},
                               scenarios[0])
        result = moran.run_experiment(config, core.RngContract(seed))
        sizes_ok = result.final_types.shape == (config.demes, config.deme_size)
        ok("deme sizes conserved", sizes_ok)
        totals = result.origin_prop.sum(axis=2) if len(result.origin_prop) else None
        ok("origin partition sums to 1",
           totals is None or np.all(np.abs(totals - 1.0) <= 1e-12))
        rerun = moran.run_experiment(config, core.RngContract(seed))
        ok("determinism under equal seeds",
           np.array_equal(result.final_types, rerun.final_types)
           and np.array_equal(result.event_t, rerun.event_t))
    return checks


def verify(spec: ExperimentSpec) -> bool:
    """Run the invariant battery relevant to the config kind; prints one
    line per check and returns overall success."""
    checks = _verify_checks(spec)
    all_ok = True
    for name, passed, detail in checks:
        status = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"[{status}] {name}{suffix}")
        all_ok &= passed
    return all_ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flucsel",
        description="Fluctuating-selection simulators: experiments and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_sim = sub.add_parser("simulate", help="run the experiment described by a config file")
    p_sim.add_argument("config")
    p_sim.add_argument("--out", default=None, help="output directory (overrides config)")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_ver = sub.add_parser("verify", help="run the invariant checks relevant to a config")
    p_ver.add_argument("config")
    args = parser.parse_args(argv)
    try:
        spec = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.command == "simulate":
        if args.seed is not None:
            spec.seed = args.seed
        try:
            manifest = run(spec, args.out, args.workers)
        except FlucselError as exc:
            print(f"simulation failed: {exc}", file=sys.stderr)
            return 1
        print(manifest)
        return 0
    return 0 if verify(spec) else 1


if __name__ == "__main__":
    raise SystemExit(main())
