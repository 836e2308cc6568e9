"""Command-line front end.

Usage::

    eddyheat SUBCOMMAND --config FILE --out DIR [--seed S] [--paths P] [--threads K]

The config file is flat ``key = value`` text; ``#`` starts a comment and
lists are comma separated.  Every run writes ``manifest.json`` before any
computation, then ``report.json`` and, depending on the subcommand,
``observables.csv`` or ``sweep.csv``.  Exit status: 0 when every verdict
passes, 1 when a verdict fails, 2 on usage or config errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

from . import __version__

# key: (type, default, description with units)
SCHEMA: dict[str, tuple[str, object, str]] = {
    "domain": ("str", "square", "domain: square (unit square) or disk (unit disk)"),
    "grid_spacing": ("float", 1 / 64, "grid spacing h [length]"),
    "lattice_N": ("int", 200, "lattice density N [1/length]"),
    "class_modulus_M": ("int", 30, "class modulus M [count]"),
    "delta_boundary_layer": ("float", 0.1, "boundary layer width delta [length]"),
    "vortex_radius_r": ("float", 0.07, "vortex rescaling radius r [length]"),
    "core_eps": ("float", 1 / 200, "mollifier core eps [dimensionless, = 1/N]"),
    "gamma_intensity": ("float", -1.0, "vortex intensity Gamma [length^2/time^(1/2)]; negative derives it from rhs_target"),
    "rhs_target": ("float", 1e-2, "target value of eps_Q/(2 kappa) |T0|^2 |phi|^2 when Gamma is derived [temperature^2]"),
    "kappa_diffusivity": ("float", 1e-2, "molecular diffusivity kappa [length^2/time]"),
    "dt_time_step": ("float", 1e-4, "time step dt [time]"),
    "checkpoints_time": ("floats", (0.005, 0.01, 0.02), "checkpoint times [time]"),
    "paths": ("int", 2000, "number of Monte Carlo paths [count]"),
    "seed": ("int", 20240601, "master seed [u64]; path p uses Philox key (seed, p)"),
    "t0_kind": ("str", "bump", "initial condition: bump | eigenfunction | random_smooth"),
    "phi_kind": ("str", "plateau", "test function: plateau | eigenfunction | one"),
    "phi_plateau_n": ("float", 10.0, "plateau slope n in min(1, n dist) [1/length]"),
    "dt_study_paths": ("int", 200, "paths in the dt-halving study [count]"),
    "chunk_paths": ("int", 250, "paths integrated together [count]"),
    "decay_intensity_factor": ("float", 10.0, "decay run: min q/2 on D_2delta as a multiple of kappa [dimensionless]"),
    "decay_time_step": ("float", 1e-2, "decay run: time step of the mean equation [time]"),
    "decay_monte_carlo": ("bool", True, "decay run: also run the Monte Carlo bound check"),
    "sweep_lattice_N": ("ints", (200, 400), "noise-sweep: lattice densities N [1/length]"),
    "sweep_gamma_c": ("float", 1.0, "noise-sweep: c in Gamma^2 = c / N^1.5 [dimensionless]"),
    "eigen_sigma2_values": ("floats", (0.0, 1.0, 10.0), "eigen-sweep: interior intensities sigma^2 [length^2/time]"),
    "eigen_delta_values": ("floats", (0.05, 0.1, 0.2), "eigen-sweep: layer widths delta [length]"),
    "eigen_dimension_d": ("int", 2, "eigen-sweep: space dimension d"),
    "eigen_radial_cells": ("int", 4096, "eigen-sweep: radial mesh cells [count]"),
    "eigen_grid_spacing": ("float", 0.0, "eigen-sweep: disk grid spacing for the 2D column, 0 to skip [length]"),
    "kraichnan_sigma2": ("float", 1.0, "kraichnan: intensity sigma^2"),
    "kraichnan_zeta_values": ("floats", (-2.0, 0.0, 1.0, 4 / 3), "kraichnan: spectral exponents zeta"),
    "kraichnan_k0": ("float", 1.0, "kraichnan: lower wavenumber k0 [1/length]"),
    "kraichnan_k1": ("float", 64.0, "kraichnan: upper wavenumber k1 [1/length], inf allowed for zeta > 0"),
    "kraichnan_dimension_d": ("int", 2, "kraichnan: space dimension d (2 or 3)"),
    "kraichnan_q_min": ("float", 1.0, "kraichnan: threshold for a large q_lower"),
    "kraichnan_eps_max": ("float", 1.0, "kraichnan: threshold for a small epsQ_upper"),
}

SUBCOMMANDS = ("noise-sweep", "theorem1", "decay", "eigen-sweep", "kraichnan-report", "validate")


class ConfigFileError(ValueError):
    pass


def _convert(key: str, raw: str):
    kind = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        items = [s for s in (x.strip() for x in raw.split(",")) if s]
        if kind == "ints":
            return tuple(int(s) for s in items)
        if kind == "floats":
            return tuple(float(s) for s in items)
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigFileError(f"unsupported type for {key}")


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a dict holding every schema key."""
    cfg = {k: v[1] for k, v in SCHEMA.items()}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigFileError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        cfg[key] = _convert(key, value)
    return cfg


def _experiment_config(cfg: dict):
    from .harness import ExperimentConfig

    names = {f.name for f in dc_fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in cfg.items() if k in names})


def _schema_help() -> str:
    lines = ["config keys (key = value):"]
    for key, (kind, default, desc) in SCHEMA.items():
        if isinstance(default, tuple):
            default = ",".join(repr(x) if isinstance(x, float) else str(x) for x in default)
        lines.append(f"  {key} ({kind}, default {default}): {desc}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eddyheat",
        description="Transport-noise heat equation experiments.",
        epilog=_schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="key = value config file (defaults apply to missing keys)")
    p.add_argument("--out", type=Path, default=Path("eddyheat-out"), help="output directory")
    p.add_argument("--seed", type=int, help="master seed override (unsigned 64-bit)")
    p.add_argument("--paths", type=int, help="path count override (positive)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for path chunks")
    return p


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_rows(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    def usage(msg: str) -> int:
        print(f"eddyheat: error: {msg}", file=sys.stderr)
        return 2

    if args.paths is not None and args.paths <= 0:
        return usage("--paths must be a positive integer")
    if args.seed is not None and not (0 <= args.seed < 2**64):
        return usage("--seed must be an unsigned 64-bit integer")
    if args.threads < 1:
        return usage("--threads must be at least 1")
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text)
    except (OSError, ConfigFileError) as exc:
        return usage(str(exc))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.paths is not None:
        cfg["paths"] = args.paths

    from .harness import config_hash, dumps
    from .vortex import validate_config

    try:
        exp = _experiment_config(cfg)
    except ValueError as exc:
        return usage(str(exc))

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())}
    manifest = {
        "subcommand": args.subcommand,
        "config_file": str(args.config) if args.config else None,
        "config": resolved,
        "config_hash": config_hash(resolved),
        "seed": cfg["seed"],
        "output_directory": str(out),
        "version": __version__,
        "threads": args.threads,
    }
    _write(out / "manifest.json", dumps(manifest))

    cmd = args.subcommand
    if cmd == "validate":
        violations = validate_config(exp.vortex.with_gamma(max(exp.gamma_intensity, 0.0)))
        report = {"experiment": "validate", "violations": violations, "passed": not violations}
        _write(out / "report.json", dumps(report))
        if violations:
            print("inadmissible:")
            for v in violations:
                print(f"  - {v}")
            return 1
        print("admissible")
        return 0

    needs_vortex = cmd in ("theorem1", "decay")
    if needs_vortex:
        violations = validate_config(exp.vortex.with_gamma(1.0))
        if violations:
            print("inadmissible:", file=sys.stderr)
            for v in violations:
                print(f"  - {v}", file=sys.stderr)
            return 2

    try:
        report = _run(cmd, cfg, exp, out, args.threads)
    except ValueError as exc:
        return usage(str(exc))
    _write(out / "report.json", dumps(report))
    verdict = bool(report.get("passed"))
    print(f"{cmd}: {'pass' if verdict else 'FAIL'} (report in {out / 'report.json'})")
    return 0 if verdict else 1


def _progress(done, total):
    print(f"  paths {done}/{total}", file=sys.stderr, flush=True)


def _run(cmd: str, cfg: dict, exp, out: Path, threads: int) -> dict:
    from . import harness

    if cmd == "theorem1":
        report = harness.run_theorem1(exp, threads=threads, progress=_progress)
        report.pop("_ensemble").write_csv(out / "observables.csv")
        return report
    if cmd == "decay":
        report = harness.run_decay(exp, threads=threads, progress=_progress, stochastic=cfg["decay_monte_carlo"])
        return report
    if cmd == "noise-sweep":
        report = harness.run_noise_sweep(
            cfg["sweep_lattice_N"], exp.class_modulus_M, exp.delta_boundary_layer, cfg["sweep_gamma_c"], exp.domain
        )
        cols = ["N", "Gamma", "eps_Q", "min_q", "stated_floor", "derived_floor", "eps_bound", "norm_w_sq",
                "same_class_max_abs", "past_threshold"]
        _write_rows(out / "sweep.csv", report["rows"], cols)
        return report
    if cmd == "eigen-sweep":
        from .eigen import SWEEP_COLUMNS, sweep, write_sweep_csv
        from .grid import build_grid

        grid = build_grid("disk", cfg["eigen_grid_spacing"]) if cfg["eigen_grid_spacing"] > 0 else None
        rows = sweep(exp.kappa_diffusivity, cfg["eigen_sigma2_values"], cfg["eigen_delta_values"],
                     cfg["eigen_dimension_d"], cfg["eigen_radial_cells"], grid)
        write_sweep_csv(rows, out / "sweep.csv")
        ok = all(r["margin"] >= -1e-6 for r in rows)
        return {"experiment": "eigen-sweep", "columns": list(SWEEP_COLUMNS), "rows": rows, "passed": ok}
    if cmd == "kraichnan-report":
        from .kraichnan import KraichnanParams, covariance_at, regime_report, torus_cross_check
        import numpy as np

        rows = []
        for zeta in cfg["kraichnan_zeta_values"]:
            k1 = cfg["kraichnan_k1"]
            p = KraichnanParams(cfg["kraichnan_sigma2"], zeta, cfg["kraichnan_k0"], k1, cfg["kraichnan_dimension_d"])
            rep = regime_report(p, cfg["kraichnan_q_min"], cfg["kraichnan_eps_max"]).as_dict()
            lam_min = float(np.linalg.eigvalsh(covariance_at(p, np.zeros(p.d)))[0])
            row = {"zeta": zeta, "k0": p.k0, "k1": k1 if math.isfinite(k1) else "inf", **rep,
                   "lambda_min_Q0": lam_min, "q_bound_holds": rep["q_lower"] <= lam_min * (1 + 1e-9)}
            if p.d == 2 and math.isfinite(k1):
                tc = torus_cross_check(p)
                row["torus_top_eigenvalue"] = tc["top_eigenvalue"]
                row["eps_bound_holds"] = tc["top_eigenvalue"] <= rep["epsQ_upper"] * (1 + 1e-9)
            rows.append(row)
        cols = ["zeta", "k0", "k1", "regime", "q_lower", "lambda_min_Q0", "epsQ_upper", "torus_top_eigenvalue",
                "enstrophy_case", "white_in_space", "favourable"]
        _write_rows(out / "sweep.csv", rows, cols)
        ok = all(r["q_bound_holds"] and r.get("eps_bound_holds", True) for r in rows)
        return {"experiment": "kraichnan-report", "rows": rows, "passed": ok}
    raise ValueError(f"unknown subcommand {cmd}")


if __name__ == "__main__":
    sys.exit(main())
