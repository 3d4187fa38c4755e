from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from teich_recur import __version__
from teich_recur.cli.commands import COMMON_OPTIONS, Command, Option, Outcome, router
from teich_recur.config import load_config_file
from teich_recur.exceptions import ConfigError, TeichRecurError, UsageError
from teich_recur.models import ExperimentSpec
from teich_recur.services.parallel import default_workers
from teich_recur.services.reports import build_summary_text, write_csv, write_json, write_plot_script
from teich_recur.services.surface_io import (
    BUILTIN_SURFACES,
    register_builtin,
    regular_octagon,
    square_torus,
    three_square_origami,
)

logger = logging.getLogger("teich_recur")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def seed_builtin_surfaces() -> None:
    if BUILTIN_SURFACES:
        return
    register_builtin("torus", square_torus)
    register_builtin("origami3", three_square_origami)
    register_builtin("octagon", regular_octagon)


def _add_option(parser: argparse.ArgumentParser, option: Option) -> None:
    # None means "not given"; defaults are merged in resolve_parameters
    parser.add_argument(*option.flags, dest=option.key, type=option.type, default=None, help=option.help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="teich-recur", description="Recurrence experiments for translation surfaces.")
    parser.add_argument("--version", action="version", version=f"teich-recur {__version__}")
    top = parser.add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = top.add_parser("run", help="run one experiment")
    experiments = run.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in router.commands.values():
        sub = experiments.add_parser(command.name, help=command.help)
        for option in COMMON_OPTIONS + command.options:
            _add_option(sub, option)
        sub.add_argument("--config", type=Path, default=None, help="key = value file")
        sub.add_argument("--plot", action="store_true", help="emit a matplotlib script next to the CSV")
        noise = sub.add_mutually_exclusive_group()
        noise.add_argument("--verbose", action="store_true")
        noise.add_argument("--quiet", action="store_true")
    return parser


def resolve_parameters(command: Command, namespace: argparse.Namespace) -> Dict[str, Any]:
    """Builtin defaults, then the config file, then command-line flags."""

    options = COMMON_OPTIONS + command.options
    by_key = {option.key: option for option in options}
    params: Dict[str, Any] = {option.key: option.default for option in options}
    if namespace.config is not None:
        for key, raw in load_config_file(namespace.config, allowed_keys=by_key).items():
            params[key] = by_key[key].convert(raw)
    flags = vars(namespace)
    for option in options:
        if flags.get(option.key) is not None:
            params[option.key] = flags[option.key]
    missing = [option.key for option in command.options if option.required and params[option.key] is None]
    if missing:
        raise UsageError(f"missing required option --{missing[0].replace('_', '-')}")
    if params["threads"] is None:
        params["threads"] = default_workers()
    return params


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def write_outputs(spec: ExperimentSpec, outcome: Outcome, plot: bool) -> Path:
    params = spec.parameters
    out_dir = Path(str(params["out"]))
    kind = spec.kind.value
    csv_path = write_csv(out_dir / f"{kind}.csv", outcome.header, outcome.rows)
    for name, (header, rows) in outcome.tables.items():
        write_csv(out_dir / f"{kind}_{name}.csv", header, rows)
    payload = {
        "kind": kind,
        "version": __version__,
        "parameters": {k: v for k, v in params.items() if k not in ("out", "threads")},
        "summary": outcome.summary,
        "checks": outcome.checks,
        "passed": outcome.passed,
    }
    write_json(out_dir / f"{kind}.json", payload)
    if plot and outcome.plot_x is not None:
        try:
            write_plot_script(out_dir, kind, outcome.plot_x, outcome.plot_columns, outcome.log_y)
        except Exception as exc:  # plotting never gates the exit status
            logger.warning("could not write plot script: %s", exc)
    return csv_path


def run(argv: Optional[Sequence[str]] = None) -> int:
    seed_builtin_surfaces()
    parser = build_parser()
    try:
        namespace, extras = parser.parse_known_args(argv)
        if extras:
            raise UsageError(f"unknown option {extras[0]}")
        configure_logging(namespace.verbose, namespace.quiet)
        command = router.commands[namespace.command]
        params = resolve_parameters(command, namespace)
        spec = ExperimentSpec(command.kind, params.get("surface"), params)
        outcome = command.handler(params)
        write_outputs(spec, outcome, namespace.plot)
    except ConfigError as exc:
        named = f" (key: {exc.key})" if exc.key else ""
        print(f"teich-recur: config error: {exc}{named}", file=sys.stderr)
        return EXIT_USAGE
    except TeichRecurError as exc:
        print(f"teich-recur: {exc}", file=sys.stderr)
        return EXIT_USAGE

    print(build_summary_text(command.kind.value, outcome.summary, outcome.checks))
    return EXIT_OK if outcome.passed else EXIT_CHECK_FAILED


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
