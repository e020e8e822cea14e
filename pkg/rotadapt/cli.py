"""Command-line entry point of rotadapt."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, NoReturn

import colorlog

from .checkpoint import load_params
from .config_flow import OPTIONS, load_config, translate
from .const import (
    ABLATION_FILE,
    ANALYSIS_FILE,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    INTRICATE_SET_FILE,
    SWEEP_FILE,
    THEORY_FILE,
    VERSION,
    Split,
)
from .evaluation import AnalysisReport, analyze_orientational_shift, evaluate, shift_probe, write_report
from .exceptions import ConfigIssue, ConfigValidationError, DatasetFormatError, InvalidArgumentError, NotFoundError
from .mining import build_intricate_set, compare_to_random, save_intricate_set
from .synthetic import build_benchmark, load_dataset
from .theory import run_theory_check
from .trainer import run_ablation_matrix, run_sensitivity_sweep, save_rows, train

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .config_flow import RunConfig
    from .data import Dataset
    from .network import ModelParams

_LOGGER = logging.getLogger(__name__)

COMMANDS = ("gen", "train", "mine", "eval", "ablate", "theory-check", "sweep", "analyze")

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


class UsageError(Exception):
    """Raised by the parser instead of exiting."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    """Parser for `rotadapt <command> [--config FILE] [--key value ...]`."""
    parser = _Parser(
        prog="rotadapt",
        description="Rotation-adaptive point cloud domain generalization.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None, help="flat key = value configuration file")
    parser.add_argument("--workers", type=int, default=None, help="bound on internal parallelism")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")
    parser.epilog = "Any configuration key can be overridden with --key value, e.g. --seed 7 --V 3."
    return parser


def parse_overrides(tokens: Sequence[str]) -> dict[str, str]:
    """Turn `--key value` / `--key=value` tokens into config overrides."""
    overrides: dict[str, str] = {}
    position = 0
    while position < len(tokens):
        token = tokens[position]
        if not token.startswith("--") or token == "--":
            msg = f"unrecognized argument: {token}"
            raise UsageError(msg)
        key, separator, value = token[2:].partition("=")
        if not separator:
            if position + 1 >= len(tokens):
                msg = f"option --{key} expects a value"
                raise UsageError(msg)
            position += 1
            value = tokens[position]
        overrides[key.replace("-", "_")] = value
        position += 1
    return overrides


def setup_logging(level: int) -> None:
    """Colored log lines on standard error."""
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT, datefmt="%H:%M:%S"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def _load_domain(cfg: RunConfig, domain: str, split: Split) -> Dataset:
    return load_dataset(cfg.data_dir, domain=domain, split=split)


def _load_model(cfg: RunConfig) -> ModelParams:
    if not cfg.ckpt:
        issue = ConfigIssue(key="ckpt", value="", constraint=translate("missing_checkpoint"))
        raise ConfigValidationError([issue])
    return load_params(Path(cfg.ckpt))


def _gen(cfg: RunConfig, _workers: int | None) -> int:
    build_benchmark(cfg.benchmark_spec(), out_dir=cfg.out_dir)
    return EXIT_OK


def _train(cfg: RunConfig, workers: int | None) -> int:
    train(cfg.train_config(workers), _load_domain(cfg, "source", Split.TRAIN), cfg.out_dir)
    return EXIT_OK


def _mine(cfg: RunConfig, workers: int | None) -> int:
    model = _load_model(cfg)
    source = _load_domain(cfg, "source", Split.TRAIN)
    intricate = build_intricate_set(model, source, cfg.mining_config(), cfg.seed, workers=workers)
    save_intricate_set(intricate, cfg.out_dir / INTRICATE_SET_FILE)
    efficacy = compare_to_random(model, source, cfg.mining_config(), cfg.seed)
    _LOGGER.info(
        "Mean cross-entropy at mined orientations %.4f vs random %.4f",
        efficacy.mined_loss,
        efficacy.random_loss,
    )
    return EXIT_OK


def _eval(cfg: RunConfig, workers: int | None) -> int:
    model = _load_model(cfg)
    report = evaluate(model, _load_domain(cfg, "target", Split.TEST), workers=workers, with_probabilities=True)
    write_report(report, cfg.out_dir)
    return EXIT_OK


def _ablate(cfg: RunConfig, workers: int | None) -> int:
    rows = run_ablation_matrix(
        cfg.train_config(workers),
        _load_domain(cfg, "source", Split.TRAIN),
        _load_domain(cfg, "target", Split.TEST),
        seeds=cfg.seed_list(),
    )
    save_rows(rows, cfg.out_dir / ABLATION_FILE)
    return EXIT_OK


def _sweep(cfg: RunConfig, workers: int | None) -> int:
    rows = run_sensitivity_sweep(
        cfg.train_config(workers),
        _load_domain(cfg, "source", Split.TRAIN),
        _load_domain(cfg, "target", Split.TEST),
        values=cfg.sweep_values,
        which=cfg.sweep_param,
        fixed=cfg.sweep_fixed,
    )
    save_rows(rows, cfg.out_dir / SWEEP_FILE)
    return EXIT_OK


def _analyze(cfg: RunConfig, workers: int | None) -> int:
    model = _load_model(cfg)
    source = _load_domain(cfg, "source", Split.TRAIN)
    target = _load_domain(cfg, "target", Split.TEST)
    analyses = [
        analyze_orientational_shift(model, source, target, strategy, cfg.seed, cfg.mining_config(), workers)
        for strategy in ("random", "intricate")
    ]
    report = AnalysisReport(analyses=analyses, probe=shift_probe(model, source, target, cfg.seed))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / ANALYSIS_FILE).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return EXIT_OK


def _theory_check(cfg: RunConfig, _workers: int | None) -> int:
    report = run_theory_check(trials=cfg.trials, seed=cfg.seed)
    print(report.format_table())  # noqa: T201
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / THEORY_FILE).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_RUNTIME


HANDLERS: dict[str, Callable[[RunConfig, int | None], int]] = {
    "gen": _gen,
    "train": _train,
    "mine": _mine,
    "eval": _eval,
    "ablate": _ablate,
    "theory-check": _theory_check,
    "sweep": _sweep,
    "analyze": _analyze,
}


def run(command: str, args: Sequence[str] = ()) -> int:
    """
    Run one command.

    Args:
        command (str): One of `COMMANDS`.
        args: Remaining command-line tokens.

    Returns:
        int: 0 on success, 1 on validation errors, 2 on runtime failures.

    """
    parser = build_parser()
    try:
        namespace, extra = parser.parse_known_args([command, *args])
        overrides = parse_overrides(extra)
        unknown = sorted(set(overrides) - set(OPTIONS))
        if unknown:
            msg = "unrecognized arguments: " + " ".join(f"--{key}" for key in unknown)
            raise UsageError(msg)
    except UsageError as exception:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exception}", file=sys.stderr)  # noqa: T201
        return EXIT_VALIDATION

    if namespace.verbose:
        setup_logging(logging.DEBUG)
    elif namespace.quiet:
        setup_logging(logging.WARNING)
    else:
        setup_logging(logging.INFO)

    if namespace.workers is not None and namespace.workers < 1:
        _LOGGER.error("--workers must be at least 1, got %d", namespace.workers)
        return EXIT_VALIDATION

    try:
        cfg = load_config(namespace.config, overrides)
        return HANDLERS[namespace.command](cfg, namespace.workers)
    except ConfigValidationError as exception:
        for issue in exception.issues:
            _LOGGER.error("Invalid configuration: %s", issue)
        return EXIT_VALIDATION
    except (InvalidArgumentError, NotFoundError, DatasetFormatError, FileNotFoundError) as exception:
        _LOGGER.error("%s: %s", namespace.command, exception)
        return EXIT_VALIDATION
    except Exception as exception:  # pylint: disable=broad-except
        _LOGGER.error("%s failed: %s", namespace.command, exception)
        return EXIT_RUNTIME


def main(argv: Sequence[str] | None = None) -> int:
    """Console entry point."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        build_parser().print_usage(sys.stderr)
        return EXIT_VALIDATION
    if argv[0] in ("--version", "-h", "--help"):
        try:
            build_parser().parse_args(argv)
        except SystemExit as exit_request:
            return int(exit_request.code or 0)
    return run(argv[0], argv[1:])
