"""Configuration-driven entry point.

Subcommands ``flow``, ``heat``, ``oracle`` and ``all`` consume one JSON run
configuration (strict schema: unknown keys rejected) and write artifacts into
an output directory:

* flow:   diagnostics.csv, snapshots/phi_######.field, final_state.field,
          geometry.npz, summary.json
* heat:   heat.csv, summary.json
* oracle: oracle_report.json, summary.json
* all:    everything above in one directory (heat consumes the flow's final
          state as frozen coefficients)

summary.json is written even on numerical aborts (status field); outputs are
byte-deterministic for a fixed config and seed (no timestamps, 17-significant-
digit floats).  Exit codes: 0 all enabled checks pass, 1 a check failed,
2 configuration/validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from .flow import (
    FlowConfig,
    FlowRunResult,
    run_flow,
    state_from_potential,
)
from .geometry import (
    BackgroundGeometry,
    ConeError,
    band_limited_real_field,
    generate_geometry,
    load_geometry,
    save_geometry,
)
from .grid import GridSpec, ScalarField, make_grid, read_field, write_field
from .heat import (
    FrozenCoefficients,
    HeatPositivityError,
    InterpolatedCoefficients,
    harnack_ratio,
    identity_coefficients,
    run_heat,
)
from .hermitian import InvalidInputError
from .oracles import hessian_convergence_study, li_bound_study, wedge_identity_sweep

SCHEMA_VERSION = 1

HEAT_COLUMNS = ["t", "sup_u", "inf_u", "sup_G_over_t", "harnack_R_running"]

_NUMBER = {"type": "number"}
_SEEDED_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "c0": _NUMBER,
        "chi_amplitude": {"type": "number", "minimum": 0},
        "F_amplitude": {"type": "number", "minimum": 0},
        "stationary": {"type": "boolean"},
    },
}
_FILE_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["file"],
    "properties": {"file": {"type": "string"}},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "mode", "grid"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "mode": {"enum": ["flow", "heat", "oracle", "all"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "N"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 8},
            },
        },
        "geometry": {"oneOf": [_SEEDED_GEOMETRY, _FILE_GEOMETRY]},
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_max"],
            "properties": {
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "dt_initial": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "dt_safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "theta_stop": {"type": "number", "minimum": 0},
                "snapshot_every": {"type": "number", "exclusiveMinimum": 0},
                "rng_seed": {"type": ["integer", "null"]},
                "alpha_liyau": {"type": "number", "exclusiveMinimum": 1},
            },
        },
        "heat": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_max"],
            "properties": {
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "u0": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["eigenmode", "constant", "random_positive"]},
                        "amplitude": {"type": "number"},
                        "value": {"type": "number", "exclusiveMinimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
                "s1": {"type": "number", "exclusiveMinimum": 0},
                "s2": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 1},
                "coefficients": {"enum": ["identity", "frozen", "interpolated"]},
                "flow_output": {"type": ["string", "null"]},
                "dt_initial": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "dt_safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "snapshot_every": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "cases": {"type": "integer", "minimum": 1},
            },
        },
        "output_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}") from None
    heat = config.get("heat", {})
    if heat:
        mode = config["mode"]
        coeffs = heat.get("coefficients", "identity")
        if mode == "heat" and coeffs == "frozen" and not heat.get("flow_output"):
            raise ConfigError("frozen heat coefficients need heat.flow_output")
        if coeffs == "interpolated" and not heat.get("flow_output"):
            raise ConfigError("interpolated heat coefficients need heat.flow_output")
        s1, s2 = heat.get("s1", 0.5), heat.get("s2", 1.0)
        if not (0 < s1 < s2 <= heat["t_max"]):
            raise ConfigError("heat section needs 0 < s1 < s2 <= t_max")


def require_sections(config: dict, command: str) -> None:
    mode = config["mode"]
    if mode != "all" and mode != command:
        raise ConfigError(
            f"config mode {mode!r} does not support subcommand {command!r}"
        )
    needed = {
        "flow": ("flow", "geometry"),
        "heat": ("heat",),
        "oracle": (),
        "all": ("flow", "heat", "geometry"),
    }[command]
    for section in needed:
        if section not in config:
            raise ConfigError(f"subcommand {command!r} requires a {section!r} section")


def _build_geometry(config: dict, seed_override=None) -> BackgroundGeometry:
    grid = make_grid(GridSpec(config["grid"]["n"], config["grid"]["N"]))
    geo = config["geometry"]
    if "file" in geo:
        path = Path(geo["file"])
        if not path.exists():
            raise ConfigError(f"geometry file {path} does not exist")
        geom = load_geometry(path)
        if geom.grid.n != grid.n or geom.grid.N != grid.N:
            raise ConfigError(
                f"geometry file grid (n={geom.grid.n}, N={geom.grid.N}) does not "
                f"match config grid (n={grid.n}, N={grid.N})"
            )
        return geom
    seed = seed_override if seed_override is not None else geo["seed"]
    return generate_geometry(
        grid,
        seed=seed,
        c0=geo.get("c0", 1.0),
        chi_amplitude=geo.get("chi_amplitude", 0.25),
        F_amplitude=geo.get("F_amplitude", 0.4),
        stationary=geo.get("stationary", False),
    )


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _sanitize(obj):
    """JSON-encodable copy: numpy scalars to Python, non-finite to strings."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _checks_pass(checks: dict) -> bool:
    return all(
        entry.get("pass", True) is True
        for entry in checks.values()
        if isinstance(entry, dict)
    )


def _flow_config_from(config: dict, seed) -> FlowConfig:
    section = config["flow"]
    return FlowConfig(
        t_max=section["t_max"],
        dt_initial=section.get("dt_initial"),
        dt_safety=section.get("dt_safety", 0.4),
        theta_stop=section.get("theta_stop", 1e-9),
        snapshot_every=section.get("snapshot_every", 0.1),
        rng_seed=section.get("rng_seed", seed),
        alpha_liyau=section.get("alpha_liyau", 2.0),
    )


def _summarize_flow(result: FlowRunResult, geom) -> dict:
    rows = result.rows
    times = np.array([r.t for r in rows])
    thetas = np.array([r.theta for r in rows])
    fit = diag.decay_fit(times, thetas)
    ratios = diag.unit_time_ratios(times, thetas, start=1.0)
    fit_payload = None
    if fit is not None:
        fit_payload = {
            "c1_hat": fit.c1_hat,
            "c2_hat": fit.c2_hat,
            "window": list(fit.window),
            "r_squared": fit.r_squared,
            "worst_unit_ratio": fit.worst_unit_ratio,
            "n_samples": fit.n_samples,
        }
    return {
        "terminated": result.terminated,
        "steps": result.steps,
        "t_final": rows[-1].t,
        "theta_initial": rows[0].theta,
        "theta_final": rows[-1].theta,
        "theta_max": float(thetas.max()),
        "b_final": rows[-1].b_current,
        "residual_sup_final": rows[-1].residual_sup,
        "osc_phi_final": rows[-1].osc_phi,
        "min_eig_final": rows[-1].min_eig,
        "cone_margin": geom.cone.margin,
        "decay_fit": fit_payload,
        "unit_time_ratios": ratios,
        "worst_unit_time_ratio": max(ratios) if ratios else None,
    }


def cmd_flow(config: dict, output_dir: Path, seed_override=None) -> int:
    output_dir.mkdir(parents=True, exist_ok=True)
    seed = seed_override
    if seed is None:
        seed = config["geometry"].get("seed")
    geom = _build_geometry(config, seed_override)
    flow_config = _flow_config_from(config, seed)

    snap_dir = output_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    counter = [0]

    def on_snapshot(state):
        write_field(
            snap_dir / f"phi_{counter[0]:06d}.field", state.phi, "phi", state.t
        )
        counter[0] += 1

    save_geometry(output_dir / "geometry.npz", geom)
    result = run_flow(geom, flow_config, on_snapshot=on_snapshot)
    diag.write_diagnostics_csv(output_dir / "diagnostics.csv", result.rows)
    write_field(
        output_dir / "final_state.field", result.final.phi, "phi", result.final.t
    )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "mode": "flow",
        "status": "aborted" if result.terminated == "aborted" else "ok",
        "grid": config["grid"],
        "seeds": {"geometry": seed, "rng": flow_config.rng_seed},
        "config": config,
        "flow": _summarize_flow(result, geom),
        "checks": result.checks,
        "pass": _checks_pass(result.checks) and result.terminated != "aborted",
    }
    if result.failure is not None:
        summary["abort"] = {
            "message": str(result.failure),
            "t": result.failure.state.t,
        }
    _write_json(output_dir / "summary.json", _sanitize(summary))
    if result.terminated == "aborted":
        return 3
    return 0 if summary["pass"] else 1


def _heat_u0(grid, section) -> ScalarField:
    spec = section.get("u0", {"kind": "eigenmode"})
    kind = spec.get("kind", "eigenmode")
    if kind == "constant":
        return grid.constant(spec.get("value", 1.0))
    if kind == "eigenmode":
        amplitude = spec.get("amplitude", 0.1)
        if not 0 < abs(amplitude) < 1:
            raise ConfigError("eigenmode amplitude must lie in (0, 1)")
        return grid.scalar(
            1.0 + amplitude * np.cos(2 * np.pi * grid.coordinate(0))
        )
    rng = np.random.default_rng(spec.get("seed", 0))
    amplitude = spec.get("amplitude", 0.3)
    raw = band_limited_real_field(grid, rng, kmax=2)
    peak = raw.max_abs()
    scale = amplitude / peak if peak > 0 else 0.0
    return ScalarField(grid, 1.0 + scale * raw.values)


def _heat_source(config, grid, output_dir, shared_flow_state=None):
    section = config["heat"]
    mode = section.get("coefficients", "identity")
    if mode == "identity":
        return identity_coefficients(grid)
    flow_output = section.get("flow_output")
    if flow_output is None:
        base = output_dir
    else:
        base = Path(flow_output)
    if mode == "frozen":
        if shared_flow_state is not None:
            geom, state = shared_flow_state
            return FrozenCoefficients(state, geom)
        geom = load_geometry(base / "geometry.npz")
        phi, header = read_field(base / "final_state.field", geom.grid)
        return FrozenCoefficients(
            state_from_potential(phi, geom, t=header["time"]), geom
        )
    geom = load_geometry(base / "geometry.npz")
    snaps = sorted((base / "snapshots").glob("phi_*.field"))
    if not snaps:
        raise ConfigError(f"no snapshots under {base / 'snapshots'}")
    pairs = []
    for p in snaps:
        phi, header = read_field(p, geom.grid)
        pairs.append((header["time"], phi))
    return InterpolatedCoefficients(pairs, geom)


def cmd_heat(config: dict, output_dir: Path, shared_flow_state=None) -> int:
    output_dir.mkdir(parents=True, exist_ok=True)
    section = config["heat"]
    grid = make_grid(GridSpec(config["grid"]["n"], config["grid"]["N"]))
    source = _heat_source(config, grid, output_dir, shared_flow_state)
    u0 = _heat_u0(source.geom.grid, section)
    t_max = section["t_max"]
    s1, s2 = section.get("s1", 0.5), section.get("s2", 1.0)
    alpha = section.get("alpha", 2.0)
    every = section.get("snapshot_every", 0.05)
    records = sorted({s1, s2, *np.arange(0.0, t_max + every / 2, every), t_max})
    records = [t for t in records if 0.0 <= t <= t_max]

    try:
        traj = run_heat(
            u0,
            source,
            (0.0, t_max),
            dt_initial=section.get("dt_initial"),
            dt_safety=section.get("dt_safety", 0.4),
            record_times=records,
            alpha=alpha,
        )
    except HeatPositivityError as err:
        summary = {
            "schema_version": SCHEMA_VERSION,
            "mode": "heat",
            "status": "aborted",
            "config": config,
            "abort": {"message": str(err)},
            "pass": False,
        }
        _write_json(output_dir / "summary.json", _sanitize(summary))
        return 3

    ratio = harnack_ratio(traj, s1, s2)
    sup_at_s1 = traj.sup_u[np.nonzero(np.abs(traj.times - s1) <= 1e-12)[0][0]]
    with open(output_dir / "heat.csv", "w", newline="") as fh:
        fh.write(",".join(HEAT_COLUMNS) + "\n")
        for k, t in enumerate(traj.times):
            running = (
                sup_at_s1 / (traj.inf_u[k] * math.exp(t - s1))
                if t >= s1
                else math.nan
            )
            fields = [
                traj.times[k], traj.sup_u[k], traj.inf_u[k],
                traj.sup_G_over_t[k], running,
            ]
            fh.write(",".join(diag.format_float(v) for v in fields) + "\n")

    checks = dict(traj.checks)
    checks["harnack_finite"] = {"pass": math.isfinite(ratio), "R": ratio}
    summary = {
        "schema_version": SCHEMA_VERSION,
        "mode": "heat",
        "status": "ok",
        "config": config,
        "heat": {
            "s1": s1,
            "s2": s2,
            "alpha": alpha,
            "harnack_ratio": ratio,
            "sup_G_over_t_max": float(np.nanmax(traj.sup_G_over_t)),
            "steps": traj.steps,
            "coefficients": section.get("coefficients", "identity"),
        },
        "checks": checks,
        "pass": _checks_pass(checks),
    }
    _write_json(output_dir / "summary.json", _sanitize(summary))
    return 0 if summary["pass"] else 1


def cmd_oracle(config: dict, output_dir: Path) -> int:
    output_dir.mkdir(parents=True, exist_ok=True)
    section = config.get("oracle", {})
    seed = section.get("seed", 0)
    cases = section.get("cases", 1000)
    bound_report = li_bound_study(seed=seed, cases=cases)
    wedge_report = wedge_identity_sweep(seed=seed, cases=cases)
    hessian_report = hessian_convergence_study(seed=seed, sizes=(8, 16, 32))
    checks = {
        "eigenvalue_bound_search": {
            "pass": bound_report["violations"] == 0
            and bound_report["tight_case"]["violations"] == 0
            and bound_report["tight_case"]["admissible_count"] == 1,
        },
        "wedge_trace_identity": {
            "pass": wedge_report["worst_relative_error"] <= 1e-12,
        },
        "hessian_convergence": {
            "pass": all(o >= 2.0 for o in hessian_report["observed_orders"]),
        },
    }
    report = {
        "seed": seed,
        "cases": cases,
        "eigenvalue_bound": bound_report,
        "wedge_identity": wedge_report,
        "hessian_convergence": hessian_report,
        "checks": checks,
    }
    _write_json(output_dir / "oracle_report.json", _sanitize(report))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "mode": "oracle",
        "status": "ok",
        "config": config,
        "checks": checks,
        "pass": _checks_pass(checks),
    }
    _write_json(output_dir / "summary.json", _sanitize(summary))
    return 0 if summary["pass"] else 1


def cmd_all(config: dict, output_dir: Path, seed_override=None) -> int:
    status = cmd_flow(config, output_dir, seed_override)
    if status not in (0, 1):
        return status
    flow_summary = json.loads((output_dir / "summary.json").read_text())
    geom = load_geometry(output_dir / "geometry.npz")
    phi, header = read_field(output_dir / "final_state.field", geom.grid)
    shared = (geom, state_from_potential(phi, geom, t=header["time"]))
    heat_dir = output_dir / "heat"
    heat_status = cmd_heat(config, heat_dir, shared_flow_state=shared)
    if heat_status not in (0, 1):
        return heat_status
    heat_summary = json.loads((heat_dir / "summary.json").read_text())
    oracle_dir = output_dir / "oracle"
    oracle_status = cmd_oracle(config, oracle_dir)
    oracle_summary = json.loads((oracle_dir / "summary.json").read_text())
    combined = {
        "schema_version": SCHEMA_VERSION,
        "mode": "all",
        "status": "ok",
        "config": config,
        "flow": flow_summary.get("flow"),
        "decay_fit": (flow_summary.get("flow") or {}).get("decay_fit"),
        "heat": heat_summary.get("heat"),
        "checks": {
            "flow": flow_summary.get("checks"),
            "heat": heat_summary.get("checks"),
            "oracle": oracle_summary.get("checks"),
        },
        "pass": all(s.get("pass") for s in (flow_summary, heat_summary, oracle_summary)),
    }
    _write_json(output_dir / "summary.json", _sanitize(combined))
    return 0 if combined["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="donflow",
        description="Spectral simulator for the parabolic flow toward the "
        "critical-metric equation on flat complex tori.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("flow", "heat", "oracle", "all"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--output", default=None, help="output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="parallelism bound (reductions are deterministic regardless)",
        )
        p.add_argument(
            "--seed", type=int, default=None, help="override the geometry seed"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        require_sections(config, args.command)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    output_dir = Path(
        args.output or config.get("output_dir") or f"donflow_out_{args.command}"
    )
    try:
        if args.command == "flow":
            return cmd_flow(config, output_dir, seed_override=args.seed)
        if args.command == "heat":
            return cmd_heat(config, output_dir)
        if args.command == "oracle":
            return cmd_oracle(config, output_dir)
        return cmd_all(config, output_dir, seed_override=args.seed)
    except (ConeError, ConfigError, InvalidInputError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
