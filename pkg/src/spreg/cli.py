"""Command line entry points.

  spreg run     --scenario <name-or-file> [--seed N] [--config F] [--csv F] [--events F] [--trace F]
  spreg replay  --trace <file> [--config F] [--csv F] [--events F]
  spreg serve   --stdio [--config F]
  spreg analyze --events <file> --csv <out>

Exit codes: 0 success, 2 configuration error, 3 format or protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import config_from_dict, load_config_dict
from .controller import ControllerConfig
from .errors import ConfigError, ProtocolError, TraceFormatError
from .harness import BUILTIN_SCENARIOS, Scenario, evaluate, generate
from .trace_io import (
    export_csv,
    read_events,
    read_trace,
    replay_records,
    serve_stdio,
    write_events,
    write_trace,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="generate a synthetic scenario and run the control loop")
    run.add_argument("--scenario", required=True,
                     help=f"scenario file, or one of: {', '.join(BUILTIN_SCENARIOS)}")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--config", default=None, help="controller config JSON")
    run.add_argument("--csv", default=None, help="write a trajectory CSV here")
    run.add_argument("--events", default=None, help="write the event log (JSONL) here")
    run.add_argument("--trace", default=None, help="record the generated logit stream here")

    replay = sub.add_parser("replay", help="drive the controller over a recorded trace")
    replay.add_argument("--trace", required=True)
    replay.add_argument("--config", default=None)
    replay.add_argument("--csv", default=None)
    replay.add_argument("--events", default=None)

    serve = sub.add_parser("serve", help="speak the JSONL request/response protocol on stdio")
    serve.add_argument("--stdio", action="store_true", required=True)
    serve.add_argument("--config", default=None)

    analyze = sub.add_parser("analyze", help="convert an event log to a trajectory CSV")
    analyze.add_argument("--events", required=True)
    analyze.add_argument("--csv", required=True)
    return parser


def _load_scenario(spec: str) -> Scenario:
    if Path(spec).is_file():
        return Scenario.from_file(spec)
    if spec in BUILTIN_SCENARIOS:
        return Scenario.builtin(spec)
    raise ConfigError(f"scenario {spec!r} is neither a file nor a built-in name")


def _config_for(path: str | None, vocab_size: int) -> ControllerConfig:
    if path is None:
        return ControllerConfig(vocab_size=vocab_size)
    return config_from_dict(load_config_dict(path), vocab_size=vocab_size)


def _cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario)
    config = _config_for(args.config, scenario.vocab_size)
    records, truth = generate(scenario, seed=args.seed, detector=config.detector)
    if args.trace:
        write_trace(records, args.trace)
    _, events, summary = replay_records(config, records)
    metrics = evaluate(events, truth)
    if args.events:
        write_events(events, args.events)
    if args.csv:
        export_csv(events, args.csv)
    print(json.dumps({"summary": summary.to_dict(), "metrics": metrics.to_dict()}, indent=2))
    return EXIT_OK


def _cmd_replay(args) -> int:
    records = read_trace(args.trace)
    if not records:
        raise TraceFormatError("trace is empty")
    config = _config_for(args.config, records[0].logits.size)
    _, events, summary = replay_records(config, records)
    if args.events:
        write_events(events, args.events)
    if args.csv:
        export_csv(events, args.csv)
    print(json.dumps({"summary": summary.to_dict()}, indent=2))
    return EXIT_OK


def _cmd_serve(args) -> int:
    base = load_config_dict(args.config) if args.config else None
    return serve_stdio(base)


def _cmd_analyze(args) -> int:
    events = read_events(args.events)
    rows = export_csv(events, args.csv)
    print(json.dumps({"rows": rows, "csv": args.csv}, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "replay": _cmd_replay,
        "serve": _cmd_serve,
        "analyze": _cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"spreg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceFormatError, ProtocolError) as exc:
        print(f"spreg: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
