"""Command-line front end.

    bcpredict <command> [--config FILE] [--set section.key=value ...] [--jobs N]

Commands: synth, features, dataset, train, predict, tune, eval, reproduce,
and init-config (prints the default configuration).  Exit status is 0 on
success, 1 for an invalid configuration or missing input, 2 for any other
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, apply_override
from .pipeline import COMMANDS, reproduce, run_command

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

log = logging.getLogger("bcpredict")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcpredict", description="Backchannel opportunity prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("reproduce", "init-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config value, e.g. training.epochs=5")
        p.add_argument("--jobs", type=int, help="worker processes for per-conversation work")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(path: Path | None, overrides: list[str], jobs: int | None) -> ExperimentConfig:
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        base = Path(path).parent
    else:
        data, base = {}, Path(".")
    for assignment in overrides:
        apply_override(data, assignment)
    if jobs is not None:
        data["jobs"] = jobs
    cfg = ExperimentConfig.from_dict(data, base)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.jobs)
        if args.command == "init-config":
            sys.stdout.write(cfg.to_json())
        elif args.command == "reproduce":
            reproduce(cfg)
        else:
            run_command(args.command, cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except KeyboardInterrupt:
        log.error("interrupted")
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
