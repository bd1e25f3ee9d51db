"""Command-line entry point.

    drawdown-risk {label,train,tune,backtest,explain,run} CONFIG

stdout receives one JSON status line; diagnostics go to stderr.
Exit status: 0 success, 1 data or runtime error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError

COMMANDS = {
    "label": pipeline.cmd_label,
    "train": pipeline.cmd_train,
    "tune": lambda cfg: pipeline.cmd_tune(cfg)[0],
    "backtest": pipeline.cmd_backtest,
    "explain": pipeline.cmd_explain,
    "run": pipeline.cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drawdown-risk", description="Drawdown risk indicator pipeline")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="path to the JSON pipeline config")
    return parser


def _status(command, status, **extra):
    print(json.dumps({"command": command, "status": status, **extra}, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        outputs = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        _status(args.command, "config_error", key=exc.key, message=str(exc))
        return 2
    except (OSError, ValueError, LookupError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _status(args.command, "error", message=str(exc))
        return 1
    print(f"{args.command}: wrote {len(outputs)} files to {cfg.out}", file=sys.stderr)
    _status(args.command, "ok", outputs=outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
