"""Command-line entry point: ``auxive {init,synth,pilot,extract,sweep}``."""
import argparse
import glob
import logging
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from . import harness
from .config import ConfigError, apply_overrides, from_dict, load_config, reference_config


def _config_from_args(args, path: Optional[str] = None):
    overrides = []
    # shortcut flags are ordinary overrides applied before --set
    for flag, key in (("seed", "seed"), ("mode", "algo.mode"), ("pilot", "pilot.mode"),
                      ("duration", "scenario.duration"), ("name", "name")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.mode == "online":
        overrides += ["algo.block_len=1", "algo.block_shift=1"]
    overrides += list(args.set or [])
    if path:
        return load_config(path, overrides)
    cfg = reference_config(args.mode or "block_online", args.pilot or "none",
                       seed=args.seed or 0, duration=args.duration or 20.0)
    return from_dict(apply_overrides(cfg.to_dict(), list(args.set or []) + (
        [f"name={args.name}"] if args.name else [])))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="YAML experiment config (default: built-in moving-source scenario)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. --set algo.alpha=0.5 (repeatable)")
    p.add_argument("--mode", choices=["batch", "block_online", "online"], help="algo.mode")
    p.add_argument("--pilot", choices=["none", "oracle", "score_file", "corrupted_oracle"], help="pilot.mode")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--duration", type=float, help="scenario.duration in seconds")
    p.add_argument("--name", help="run id")
    p.add_argument("-o", "--output-dir", help=f"output directory (env {harness.OUTPUT_DIR_ENV} also works)")


def cmd_init(args) -> int:
    cfg = reference_config(args.mode, args.pilot, args.is_position, args.duration, args.seed)
    text = cfg.to_yaml()
    if args.path == "-":
        sys.stdout.write(text)
    else:
        Path(args.path).write_text(text)
        print(args.path)
    return 0


def cmd_synth(args) -> int:
    print(harness.run_synth(_config_from_args(args, args.config), args.output_dir))
    return 0


def cmd_pilot(args) -> int:
    print(harness.run_pilot(_config_from_args(args, args.config), args.output_dir))
    return 0


def cmd_extract(args) -> int:
    res = harness.run_experiment(_config_from_args(args, args.config), args.output_dir)
    row = res.summary_row()
    print(f"{row['run_id']}: input SNR {row['input_snr_db']:.2f} dB, iSNR {row['isnr_db']:.2f} dB, "
          f"{'FAIL' if row['fail'] else 'ok'}")
    return 0


def _expand(patterns: List[str]) -> List[str]:
    paths = []
    for pat in patterns:
        matches = sorted(glob.glob(pat))
        if not matches:
            raise ConfigError(f"no config matches {pat!r}")
        paths.extend(matches)
    return paths


def cmd_sweep(args) -> int:
    if args.manifest:
        configs = harness.load_sweep_manifest(args.manifest)
    elif args.configs:
        configs = [load_config(p) for p in _expand(args.configs)]
    else:
        configs = [reference_config(mode, pilot, pos, args.duration, seed)
                   for mode in args.modes for pos in args.positions for pilot in args.pilots
                   for seed in range(args.n_mixtures)]
    if args.set:
        configs = [from_dict(apply_overrides(c.to_dict(), args.set)) for c in configs]
    result = harness.run_sweep(configs, args.output_dir)
    for r in result.aggregates:
        print(f"{r['mode']:>12} {r['pilot']:>16} pos{r['is_position']}: "
              f"{r['mean_isnr_db']:6.2f} +- {r['std_isnr_db']:5.2f} dB, fail {r['fail_pct']:5.1f}% "
              f"({r['n_runs']} runs, {r['n_errors']} errors)")
    print(result.output_dir / "aggregate.csv")
    return 1 if any(r.get("error") for r in result.rows) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auxive", description="Piloted online independent vector extraction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a fully spelled-out example config")
    p.add_argument("path", nargs="?", default="-")
    p.add_argument("--mode", default="block_online", choices=["batch", "block_online", "online"])
    p.add_argument("--pilot", default="none", choices=["none", "oracle", "score_file", "corrupted_oracle"])
    p.add_argument("--is-position", type=int, default=1, choices=[1, 2])
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    for name, func, help_text in (("synth", cmd_synth, "render mixture and source images to WAV"),
                                  ("pilot", cmd_pilot, "compute the pilot trace"),
                                  ("extract", cmd_extract, "extract the SOI and write WAV + metrics")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="run many experiments and aggregate")
    p.add_argument("configs", nargs="*", help="config files or glob patterns")
    p.add_argument("--manifest", help="rerun a sweep from its sweep_manifest.yaml")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--n-mixtures", type=int, default=20, help="built-in sweep: seeds 0..n-1")
    p.add_argument("--duration", type=float, default=20.0, help="built-in sweep: mixture length")
    p.add_argument("--modes", nargs="+", default=["block_online"])
    p.add_argument("--pilots", nargs="+", default=["none", "corrupted_oracle", "oracle"])
    p.add_argument("--positions", nargs="+", type=int, default=[1])
    p.add_argument("-o", "--output-dir")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, harness.HarnessError, FileNotFoundError, ValueError, KeyError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
