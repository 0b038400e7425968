"""Command-line front end.

Commands: simulate, dose, dlim, report, validate.  Exit codes: 0 success,
2 configuration/validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .analysis import AnalysisError
from .antenna import generate_grid
from .config import ConfigError, load_config, load_scenario
from .dosimetry import DosimetryError
from .pipeline import PipelineError, cmd_dlim, cmd_dose, cmd_report, cmd_simulate
from .scene import SceneError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _add_common(p):
    p.add_argument("--config", help="run config JSON", default=None)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=None,
                   help="use a bundled scenario config instead of --config")
    p.add_argument("--out", help="output directory (overrides the config)",
                   default=None)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="raydose",
        description="V2X multipath exposure simulator: field prediction, "
                    "whole-body SAR, exposure statistics")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="trace the scene and write field grids")
    _add_common(p)
    p.add_argument("--threads", type=int, default=1,
                   help="worker count for the launch stage (results are "
                        "identical for any value)")

    p = sub.add_parser("dose", help="convert field grids to SAR grids")
    _add_common(p)

    p = sub.add_parser("dlim", help="influence distance and region of interest")
    _add_common(p)

    p = sub.add_parser("report", help="combined report over finished runs")
    p.add_argument("--out", required=True,
                   help="root directory containing run subdirectories, or a "
                        "single run directory")
    p.add_argument("--output-file", default=None,
                   help="report path (default: <out>/report.json)")

    p = sub.add_parser("validate", help="check a config and its scene")
    _add_common(p)
    return ap


def _load(args):
    if (args.config is None) == (args.scenario is None):
        raise ConfigError("exactly one of --config or --scenario is required")
    if args.scenario is not None:
        return load_scenario(args.scenario)
    return load_config(args.config)


def _run_dirs(root: Path):
    if (root / "manifest.json").exists():
        return [root]
    dirs = sorted(d for d in root.iterdir()
                  if d.is_dir() and (d / "manifest.json").exists())
    if not dirs:
        raise PipelineError(f"no run directories under {root}")
    return dirs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load(args)
            manifest = cmd_simulate(cfg, out_dir=args.out, workers=args.threads)
            print(f"simulate: {manifest['receivers']} receivers, "
                  f"{manifest['transmitters']} transmitter(s), "
                  f"files {sorted(manifest['field_files'].values())}")
        elif args.command == "dose":
            cfg = _load(args)
            report = cmd_dose(cfg, out_dir=args.out)
            for name, entry in sorted(report.items()):
                c = entry["compliance"]
                print(f"dose: {name}: max {c['max_W_per_kg']:.3e} W/kg, "
                      f"margin {c['margin_dB']:.1f} dB, "
                      f"{'pass' if c['pass'] else 'FAIL'}")
        elif args.command == "dlim":
            cfg = _load(args)
            result = cmd_dlim(cfg, out_dir=args.out)
            per = ", ".join(f"{k}={v:.1f} m"
                            for k, v in sorted(result["d_lim_per_model_m"].items()))
            print(f"dlim: {per}; shared d_lim {result['d_lim_m']:.1f} m "
                  f"({result['d_lim_rule']})")
        elif args.command == "report":
            root = Path(args.out)
            out_file = args.output_file or (root / "report.json")
            report = cmd_report(_run_dirs(root), out_file)
            print(f"report: {len(report['runs'])} run(s) -> {out_file}")
        elif args.command == "validate":
            cfg = _load(args)
            scene = cfg.load_scene()
            rx, removed = generate_grid(cfg.grid, scene)
            print(f"validate: ok ({scene.name}: {len(scene.surfaces)} surfaces,"
                  f" {len(scene.edges)} edges; grid {len(rx)} receivers,"
                  f" {len(removed)} removed inside geometry)")
        return EXIT_OK
    except (ConfigError, SceneError, DosimetryError, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
