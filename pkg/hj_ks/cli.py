"""Command-line front end: ``hj_ks <engine> --config run.cfg [--set section.key=value ...]``."""

import argparse
import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from . import __version__
from .config.config import config, reload_config
from .config.run_config import BENCH_PRESETS, ENGINES, RunConfig, load_run_config, parse_config
from .errors import ConfigError, HjKsError

logger = logging.getLogger('hj_ks')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

_quiet = False


def console_print(message: str, message_type: str = "info") -> None:
    """Print a formatted message to the console stderr"""
    if _quiet and message_type in ("info", "success"):
        return
    timestamp = datetime.now().strftime("%H:%M:%S")
    color = {
        "info": "\033[94m",  # Blue
        "success": "\033[92m",  # Green
        "warning": "\033[93m",  # Yellow
        "error": "\033[91m",  # Red
    }.get(message_type, "\033[0m")

    print(f"{color}[{timestamp}] {message}\033[0m", file=sys.stderr, flush=True)


def setup_logging(quiet: bool = False) -> None:
    """Rotating log file plus stderr, sized from the [logging] defaults."""
    settings = config["logging"]
    level = getattr(logging, str(settings["log_level"]).upper(), logging.INFO)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    file_handler = RotatingFileHandler(settings["log_file"], maxBytes=settings["max_bytes"],
                                       backupCount=settings["backup_count"])
    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.WARNING if quiet else level)

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    for handler in (file_handler, stream_handler):
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hj_ks", description="KS invariant of classical, kicked and quantum Hamiltonian systems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    for engine in ENGINES:
        sub = commands.add_parser(engine, help=f"run the {engine} engine")
        sub.add_argument("--config", required=engine != "bench", help="run file (key = value with [sections])")
        sub.add_argument("--out", help="output directory (default runs/<name or engine>)")
        sub.add_argument("--seed", type=int, help="seed for sampled initial conditions")
        sub.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                         help="override a run-file key; repeatable")
        sub.add_argument("--quiet", action="store_true", help="only warnings and errors on the console")
        if engine == "bench":
            sub.add_argument("--preset", choices=BENCH_PRESETS, help="named benchmark")
            sub.add_argument("--scale", type=float,
                             help="fraction of the preset's horizon; results are indicative when < 1")
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.command == "bench":
        if args.preset:
            overrides.append(f"bench.preset={args.preset}")
        if args.scale is not None:
            overrides.append(f"bench.scale={args.scale!r}")
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = _overrides(args)
    if args.config:
        cfg = load_run_config(args.config, overrides)
    else:
        name = f"\nname = {args.preset}" if getattr(args, "preset", None) else ""
        cfg = parse_config(f"[run]\nengine = bench{name}\n", overrides)
    if cfg.engine != args.command:
        raise ConfigError([f"{args.config} is a {cfg.engine} run file, not {args.command}"])
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    global _quiet
    load_dotenv()
    reload_config()

    args = build_parser().parse_args(argv)
    _quiet = args.quiet
    setup_logging(args.quiet)

    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        for problem in e.errors:
            console_print(f"config: {problem}", "error")
        return EXIT_CONFIG

    from .runner.experiments import run

    console_print(f"hj_ks {__version__}: {cfg.engine} run -> {cfg.output_dir}", "info")
    try:
        manifest = run(cfg)
    except (HjKsError, ValueError) as e:
        logger.error(f"Run failed: {e}")
        console_print(f"Run failed: {e}", "error")
        return EXIT_ERROR

    for key, value in manifest.estimates.items():
        if isinstance(value, float):
            console_print(f"  {key} = {value:.10g}", "info")
    manifest_path = os.path.join(cfg.output_dir, "manifest.json")
    if manifest.status == "ok":
        console_print(f"Done in {manifest.wall_time:.2f}s, manifest {manifest_path}", "success")
    else:
        console_print(f"Stopped early ({manifest.error}); partial results in {manifest_path}", "warning")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
