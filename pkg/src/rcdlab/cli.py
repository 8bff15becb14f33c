"""Command line entry point: ``rcdlab run | oracle | presets``."""

from __future__ import annotations

import argparse
import json
import sys

from . import ou
from .errors import RcdLabError
from .suite import (
    PRESETS,
    THREADS_ENV,
    ConfigError,
    default_threads,
    emit_report,
    parse_config,
    preset_config,
    run_suite,
    summarize,
)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcdlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a check suite")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="JSON sweep configuration")
    src.add_argument("--preset", help="built-in suite (see 'presets')")
    run.add_argument("--threads", type=int, default=None,
                     help=f"worker threads (default: config, then ${THREADS_ENV}, then 1)")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--output", default=None, help="report path (default: stdout)")
    run.add_argument("--format", choices=("csv", "json"), default=None)

    orc = sub.add_parser("oracle", help="evaluate an OU closed form")
    orc.add_argument("--query", required=True, choices=sorted(ou.QUERIES))
    orc.add_argument("--args", nargs="*", default=[], metavar="KEY=VALUE")

    sub.add_parser("presets", help="list built-in suites")
    return ap


def _parse_kv(items):
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise ConfigError(f"value of {key!r} is not a number: {val!r}") from None
    return out


def _cmd_run(args) -> int:
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
        cfg = parse_config(text)
    else:
        cfg = preset_config(args.preset)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be a positive integer")
    threads = args.threads or cfg.threads or default_threads()
    rows = run_suite(cfg, threads=threads)
    fmt = args.format or cfg.output_format
    path = args.output or cfg.output_path
    text = emit_report(rows, fmt, path)
    if path is None:
        sys.stdout.write(text)
    line, code = summarize(rows)
    print(line, file=sys.stderr)
    return code


def _cmd_oracle(args) -> int:
    kwargs = _parse_kv(args.args)
    try:
        value = ou.ou_closed_form(args.query, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for {args.query}: {exc}") from None
    if hasattr(value, "_asdict"):
        value = value._asdict()
    print(json.dumps(value))
    return 0


def _cmd_presets(args) -> int:
    for name, (desc, _) in PRESETS.items():
        print(f"{name}\t{desc}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"run": _cmd_run, "oracle": _cmd_oracle, "presets": _cmd_presets}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RcdLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
