"""Command-line experiment runner.

Subcommands: simulate (per-trajectory CSVs plus a run manifest), estimate
(SafetyReport JSON), bounds (worst-case bound table), compare (the 2x2
reciprocal-vs-supermartingale saturation study), sweep (safety probability
versus noise level, plot-ready CSV).  Exit codes: 0 success, 1 config
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .harness import (
    ConfigError,
    ScenarioConfig,
    _build_runtime,
    _theoretical_bound,
    emit_trajectory_csv,
    run_ensemble,
    sweep_noise,
)
from .sde import NoiseStream, State, simulate

DEFAULT_SWEEP_SIGMAS = [0.0, 0.05, 0.1, 0.15, 0.2]


def _version_string() -> str:
    try:
        base = metadata.version("ssk")
    except metadata.PackageNotFoundError:
        base = "0.0.0"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"ssk-{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"ssk-{base}"


def _parse_set(pairs: list[str]) -> dict:
    """--set key=value overrides with dotted paths; values parsed as JSON."""
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], val)
        else:
            out[key] = val
    return out


def _load_config(args) -> ScenarioConfig:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if args.set:
        data = _deep_update(data, _parse_set(args.set))
    return ScenarioConfig.from_dict(data)


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rt = _build_runtime(config)
    x0 = np.asarray(config.model_params["x0"], dtype=float)
    from .harness import QpStepController  # local to keep module import light

    for i in range(config.trajectories):
        controller = QpStepController(
            rt.model,
            rt.spec,
            clf=rt.clf,
            control_box=config.control_box,
            saturate_after=config.saturate_after,
            weight_u=config.resolved_control_weight(),
        )
        traj = simulate(
            rt.model,
            controller,
            State(x0),
            config.T,
            config.dt,
            NoiseStream(seed=config.seed, stream_id=i),
            stop_on_exit=config.stop_on_exit,
            exit_test=lambda s: rt.h.value(s.values) > 0.0,
        )
        emit_trajectory_csv(traj, out / f"trajectory_{i:04d}.csv", h=rt.h.value)
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "version": _version_string(),
        "trajectories_written": config.trajectories,
    }
    _json_dump(manifest, out / "manifest.json")
    print(f"wrote {config.trajectories} trajectories to {out}")
    return 0


def _cmd_estimate(args) -> int:
    config = _load_config(args)
    report = run_ensemble(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(report.to_dict(), out / "safety_report.json")
    print(
        f"empirical safety {report.empirical_probability:.4f} "
        f"(95% CI [{report.wilson_interval_95[0]:.4f}, {report.wilson_interval_95[1]:.4f}])"
    )
    return 0


def _cmd_bounds(args) -> int:
    config = _load_config(args)
    rt = _build_runtime(config)
    xi = np.asarray(config.model_params["x0"], dtype=float)
    report = _theoretical_bound(rt, xi)
    horizon = "inf" if report.horizon is None else f"{report.horizon:g}"
    print(f"{'family':<10} {'bound':>12} {'horizon':>9}")
    print(f"{report.family:<10} {report.bound:>12.6g} {horizon:>9}")
    for key, val in sorted(report.inputs.items()):
        print(f"  {key}: {val}")
    return 0


def _cmd_compare(args) -> int:
    config = _load_config(args)
    M = float(config.model_params.get("M", 1650.0))
    grav = float(config.model_params.get("gravity", 9.81))
    box = config.control_box or [[-0.5 * M * grav, None]]
    cells = []
    for family in ("srcbf", "scbf"):
        for bounded in (False, True):
            cell_cfg = replace(
                config,
                certificate={**config.certificate, "family": family},
                control_box=box if bounded else None,
            )
            report = run_ensemble(cell_cfg)
            cells.append(
                {
                    "family": family,
                    "bounded": bounded,
                    "report": report.to_dict(),
                }
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _json_dump({"config": config.to_dict(), "cells": cells}, out / "compare_report.json")

    def cell_p(family: str, bounded: bool) -> float:
        for c in cells:
            if c["family"] == family and c["bounded"] == bounded:
                return c["report"]["empirical_probability"]
        raise KeyError((family, bounded))

    print(f"{'':<18}{'srcbf':>10}{'scbf':>10}")
    for bounded, label in ((False, "unbounded control"), (True, "bounded control")):
        print(f"{label:<18}{cell_p('srcbf', bounded):>10.2%}{cell_p('scbf', bounded):>10.2%}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    sigmas = [float(s) for s in args.sigmas.split(",")] if args.sigmas else DEFAULT_SWEEP_SIGMAS
    rows = sweep_noise(config, sigmas, init_sampling=args.init_sampling)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "family", "p", "lo", "hi"])
        for row in rows:
            writer.writerow(
                [
                    format(row["sigma"], ".17g"),
                    row["family"],
                    format(row["p"], ".17g"),
                    format(row["lo"], ".17g"),
                    format(row["hi"], ".17g"),
                ]
            )
    print(f"wrote {len(rows)} sweep rows to {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssk", description="stochastic safety-certificate experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", _cmd_simulate),
        ("estimate", _cmd_estimate),
        ("bounds", _cmd_bounds),
        ("compare", _cmd_compare),
        ("sweep", _cmd_sweep),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario config JSON")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override config entries (dotted paths, JSON values)",
        )
        p.set_defaults(handler=fn)
    sweep_p = sub.choices["sweep"]
    sweep_p.add_argument("--sigmas", default="", help="comma-separated noise levels")
    sweep_p.add_argument(
        "--init-sampling",
        default="uniform-in-disk",
        choices=["fixed", "uniform-in-disk"],
    )
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
