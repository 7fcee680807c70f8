"""Command line: ``atomlens run|validate|presets``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import (ConfigError, load_config, load_preset, parse_config, preset_names,
                     preset_text, validate)
from .ensemble import THREADS_ENV

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _read(target: str):
    """A config from a file path, or ``preset:<name>`` for a bundled preset."""
    if target.startswith("preset:"):
        name = target[len("preset:"):]
        return preset_text(name), target
    path = Path(target)
    return path.read_text(), str(path)


def _cmd_run(args) -> int:
    from .scenarios import ScenarioFailure, run

    try:
        text, source = _read(args.config)
        cfg = parse_config(text, source)
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    cfg = cfg.with_overrides(seed=args.seed, particles=args.particles, output=args.out)
    if cfg.particles < 2 or not 0 <= cfg.seed < 2**64:
        print("error: --particles must be >= 2 and --seed an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    for d in validate(cfg):
        print(d, file=sys.stderr)
    out = cfg.output_path or f"{Path(source.split(':')[-1]).stem}.csv"
    try:
        result = run(cfg)
    except ScenarioFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    written = result.write(out)
    sys.stdout.write(result.summary())
    print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        text, source = _read(args.config)
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate(text, source)
    for d in diags:
        print(d)
    errors = sum(d.level == "error" for d in diags)
    warnings = len(diags) - errors
    print(f"{errors} error(s), {warnings} warning(s)")
    return EXIT_CONFIG if errors else EXIT_OK


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    if not args.name:
        print("error: presets show needs a name", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sys.stdout.write(preset_text(args.name))
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="atomlens", description="Gaussian-beam atom lens: scenarios, sweeps and checks.",
        epilog=f"Worker threads for traced ensembles: ${THREADS_ENV} (default: all cores).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config (file path or preset:<name>)")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--particles", type=int)
    r.add_argument("--out", help="output CSV path")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    s = sub.add_parser("presets", help="list or show bundled presets")
    s.add_argument("action", choices=("list", "show"))
    s.add_argument("name", nargs="?")
    s.set_defaults(func=_cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
