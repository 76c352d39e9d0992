"""Command-line interface.

Subcommands:
  run     execute a configured experiment (writes CSVs + manifest)
  pilot   coarse observational run reporting the decoupling time
  bias1d  deterministic finite-difference bias sweep
  report  render the outputs of a finished run as text
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ConfigError,
    RunFailedError,
    defaults_for,
    load_config,
    pilot_run,
    run_experiment,
)


def _add_common(parser, need_mode=True):
    parser.add_argument("--config", metavar="PATH",
                        help="INI or JSON run configuration")
    if need_mode:
        parser.add_argument("--mode", choices=("mobility", "shear", "bias1d",
                                               "gk1d", "ttcf1d"),
                            help="use built-in defaults for this mode "
                                 "(unless --config is given)")
    parser.add_argument("--seed", type=int, metavar="U64",
                        help="override the master seed")
    parser.add_argument("--threads", type=int, metavar="N",
                        help="worker processes for realization chunks")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--realizations", type=int, metavar="K",
                        help="override the number of realizations")


def _config_from_args(args, default_mode=None):
    if args.config:
        cfg = load_config(args.config)
    else:
        mode = getattr(args, "mode", None) or default_mode
        if mode is None:
            raise ConfigError("either --config or --mode is required")
        cfg = defaults_for(mode)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.realizations is not None:
        overrides["K"] = args.realizations
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def _cmd_run(args):
    cfg = _config_from_args(args)
    manifest = run_experiment(cfg)
    print(f"run completed in {manifest.wall_seconds:.1f}s -> {cfg.output_dir}")
    for key, value in sorted(manifest.results.items()):
        print(f"  {key} = {value:.6g}" if isinstance(value, float)
              else f"  {key} = {value}")
    return 0


def _cmd_pilot(args):
    cfg = _config_from_args(args)
    report = pilot_run(cfg)
    print(json.dumps(report, indent=2))
    if report["decoupling_time"] is None:
        print("no decoupling within the horizon; T can likely be extended")
    else:
        print(f"subtraction stderr overtakes naive at t ~ "
              f"{report['decoupling_time']:.3g}; truncate estimators around there")
    return 0


def _cmd_bias1d(args):
    cfg = _config_from_args(args, default_mode="bias1d")
    if cfg.mode != "bias1d":
        raise ConfigError("bias1d subcommand needs a bias1d config")
    manifest = run_experiment(cfg)
    print(f"fitted log-log slopes: alpha=1 -> {manifest.results['slope_alpha1']:.4f}, "
          f"alpha=2 -> {manifest.results['slope_alpha2']:.4f}")
    print(f"reference transport coefficient: "
          f"{manifest.results['reference_transport']:.6g}")
    return 0


def _cmd_report(args):
    outdir = Path(args.out or ".")
    manifest_path = outdir / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest.json under {outdir}", file=sys.stderr)
        return 1
    manifest = json.loads(manifest_path.read_text())
    print(f"mode: {manifest['config']['mode']}   status: {manifest['status']}   "
          f"wall: {manifest['wall_seconds']:.1f}s")
    print(f"seed: {manifest['seeds']['master_seed']}   "
          f"streams: {manifest['seeds']['stream_ids']}")
    for key, value in sorted(manifest.get("results", {}).items()):
        print(f"  {key} = {value:.6g}" if isinstance(value, float)
              else f"  {key} = {value}")
    table = outdir / "variance_table.txt"
    if table.exists():
        print()
        print(table.read_text().rstrip())
    if manifest.get("failures"):
        print(f"\n{len(manifest['failures'])} failed realizations")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="transportmc",
        description="Transport-coefficient estimation for stochastic particle systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_pilot = sub.add_parser("pilot", help="coarse decoupling-time probe")
    _add_common(p_pilot)
    p_pilot.set_defaults(func=_cmd_pilot)

    p_bias = sub.add_parser("bias1d", help="deterministic finite-eta bias sweep")
    _add_common(p_bias, need_mode=False)
    p_bias.set_defaults(func=_cmd_bias1d)

    p_rep = sub.add_parser("report", help="summarize a finished run")
    p_rep.add_argument("--out", metavar="DIR", help="run output directory")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunFailedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
