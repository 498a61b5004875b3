"""Command line interface: ``solve``, ``check``, ``bench``, ``eval`` and ``sample``."""
from __future__ import annotations

import io
import json
import logging
from pathlib import Path
import sys
from typing import Any, Sequence

import click

from backend.app.services.solver_service import (
    EXIT_PROVED,
    EXIT_REFUTED,
    EXIT_UNKNOWN,
    EXIT_USAGE,
    cmd_bench,
    cmd_check,
    cmd_eval,
    cmd_sample,
    cmd_solve,
    load_recurrence,
)
from backend.config import SolverSettings, resolve_settings
from solver.models.checker import Verdict
from solver.models.dsl import parse_candidate, parse_guard
from solver.models.regions import RegionNotEnumerableError

LOGGER = logging.getLogger(__name__)


class SolverGroup(click.Group):
    """Maps click usage errors to exit status 1; 2 is reserved for Unknown verdicts."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        standalone = kwargs.pop("standalone_mode", True)
        try:
            code = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as exc:
            exc.show()
            code = EXIT_USAGE
        except click.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_USAGE
        if not standalone:
            return code
        sys.exit(code or 0)


def _settings(config: str | None, seed: int | None, cas_cmd: str | None, extra: dict[str, Any]) -> SolverSettings:
    overrides = dict(extra)
    overrides["seed"] = seed
    overrides["cas_cmd"] = cas_cmd
    return resolve_settings(config_file=config, overrides=overrides)


def _pairs(values: Sequence[str]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in values:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--set")
        pairs[key.strip().lower()] = value.strip()
    return pairs


def _verbose(enabled: bool) -> None:
    if enabled:
        logging.basicConfig(level=logging.DEBUG, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        logging.getLogger().setLevel(logging.DEBUG)


def _fail(ctx: click.Context, exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    ctx.exit(EXIT_USAGE)


def _verdict_code(verdict: Verdict) -> int:
    if verdict.is_proved:
        return EXIT_PROVED
    if verdict.is_refuted:
        return EXIT_REFUTED
    return EXIT_UNKNOWN


_common = [
    click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), help="key=value settings file."),
    click.option("--seed", type=int, default=None, help="Seed for every random choice."),
    click.option("--cas-cmd", default=None, help="Command of the external CAS bridge (enables it)."),
    click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override any setting."),
    click.option("--verbose", is_flag=True, help="Log at DEBUG level."),
]


def common_options(func: Any) -> Any:
    for option in reversed(_common):
        func = option(func)
    return func


@click.group(cls=SolverGroup, name="solver")
def solver_cli() -> None:
    """Fit and verify bounds of recurrence equations."""


@solver_cli.command("solve")
@click.argument("recurrence", type=click.Path(exists=True, dir_okay=False))
@click.option("--direction", type=click.Choice(["lower", "upper", "both"]), default="both", show_default=True)
@click.option("--bank", type=click.Choice(["auto", "poly2", "poly2+log", "fastgrow"]), default=None)
@click.option("--nb", type=int, default=None)
@click.option("--nrs", type=int, default=None)
@click.option("--brs", type=int, default=None)
@click.option("--degree", type=int, default=None)
@click.option("--lambda", "lambda_", type=float, default=None)
@click.option("--max-denominator", type=int, default=None)
@click.option("--repair/--no-repair", default=None)
@click.option("--repair-budget", type=int, default=None)
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), help="Candidate file of the exact solution.")
@click.option("--features", type=click.Path(exists=True, dir_okay=False), help="Custom 'feature name : expr' bank.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
@common_options
@click.pass_context
def solve_command(
    ctx: click.Context,
    recurrence: str,
    direction: str,
    reference: str | None,
    features: str | None,
    as_json: bool,
    config: str | None,
    seed: int | None,
    cas_cmd: str | None,
    assignments: tuple[str, ...],
    verbose: bool,
    **flags: Any,
) -> None:
    """Sample, fit, round, check and repair bounds for RECURRENCE."""

    _verbose(verbose)
    try:
        extra = {**_pairs(assignments), **{key: value for key, value in flags.items() if value is not None}}
        settings = _settings(config, seed, cas_cmd, extra)
        document = load_recurrence(recurrence)
        ref = None
        if reference:
            ref = parse_candidate(Path(reference).read_text(encoding="utf-8"), document.variables)
        bank_text = Path(features).read_text(encoding="utf-8") if features else None
        report = cmd_solve(document, direction, settings, reference=ref, features=bank_text)
    except ValueError as exc:
        _fail(ctx, exc)
        return
    click.echo(json.dumps(report.to_dict(), indent=2) if as_json else report.render_text(), nl=as_json)
    ctx.exit(report.exit_code)


@solver_cli.command("check")
@click.argument("recurrence", type=click.Path(exists=True, dir_okay=False))
@click.argument("candidate", type=click.Path(exists=True, dir_okay=False))
@click.option("--direction", type=click.Choice(["lower", "upper"]), default="upper", show_default=True)
@click.option("--d1", default=None, help="Finite region checked exhaustively (hybrid verification).")
@click.option("--d2", default=None, help="Region checked inductively; defaults to the complement of --d1.")
@click.option("--json", "as_json", is_flag=True)
@common_options
@click.pass_context
def check_command(
    ctx: click.Context,
    recurrence: str,
    candidate: str,
    direction: str,
    d1: str | None,
    d2: str | None,
    as_json: bool,
    config: str | None,
    seed: int | None,
    cas_cmd: str | None,
    assignments: tuple[str, ...],
    verbose: bool,
) -> None:
    """Check whether CANDIDATE bounds the least solution of RECURRENCE."""

    _verbose(verbose)
    try:
        settings = _settings(config, seed, cas_cmd, _pairs(assignments))
        document = load_recurrence(recurrence)
        first = parse_guard(d1, document.variables) if d1 else None
        second = parse_guard(d2, document.variables) if d2 else None
        verdict = cmd_check(
            document,
            Path(candidate).read_text(encoding="utf-8"),
            direction,
            settings,
            d1=first,
            d2=second,
        )
    except (ValueError, RegionNotEnumerableError) as exc:
        _fail(ctx, exc)
        return
    if as_json:
        click.echo(json.dumps(verdict.to_dict(), indent=2))
    else:
        line = f"{direction}: {verdict.status.value}"
        if verdict.is_refuted:
            line += f" at {verdict.point} ({verdict.kind}: {verdict.lhs} vs {verdict.rhs})"
        elif verdict.reason:
            line += f" ({verdict.reason})"
        if verdict.method:
            line += f" [{verdict.method}]"
        click.echo(line)
    ctx.exit(_verdict_code(verdict))


@solver_cli.command("bench")
@click.argument("suite", type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Write the table as CSV.")
@click.option("--workers", type=int, default=None)
@common_options
@click.pass_context
def bench_command(
    ctx: click.Context,
    suite: str,
    csv_path: str | None,
    workers: int | None,
    config: str | None,
    seed: int | None,
    cas_cmd: str | None,
    assignments: tuple[str, ...],
    verbose: bool,
) -> None:
    """Solve every .rec file of SUITE and tabulate verdicts and quality."""

    _verbose(verbose)
    try:
        settings = _settings(config, seed, cas_cmd, _pairs(assignments))
        table = cmd_bench(suite, settings, workers=workers)
    except ValueError as exc:
        _fail(ctx, exc)
        return
    click.echo(table.render_text(), nl=False)
    if csv_path:
        Path(csv_path).write_text(table.to_csv(), encoding="utf-8")
        LOGGER.info("Wrote %d row(s) to %s", len(table.rows), csv_path)
    ctx.exit(EXIT_PROVED)


@solver_cli.command("eval")
@click.argument("recurrence", type=click.Path(exists=True, dir_okay=False))
@click.argument("point", nargs=-1, type=int, required=True)
@common_options
@click.pass_context
def eval_command(
    ctx: click.Context,
    recurrence: str,
    point: tuple[int, ...],
    config: str | None,
    seed: int | None,
    cas_cmd: str | None,
    assignments: tuple[str, ...],
    verbose: bool,
) -> None:
    """Print the exact least-solution value of RECURRENCE at POINT."""

    _verbose(verbose)
    try:
        settings = _settings(config, seed, cas_cmd, _pairs(assignments))
        status = cmd_eval(load_recurrence(recurrence), point, settings)
    except ValueError as exc:
        _fail(ctx, exc)
        return
    if status.ok:
        click.echo(str(status.value))
        ctx.exit(EXIT_PROVED)
    click.echo(f"{status.outcome.value}" + (f": {status.detail}" if status.detail else ""))
    ctx.exit(EXIT_UNKNOWN)


@solver_cli.command("sample")
@click.argument("recurrence", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="CSV file; stdout when omitted.")
@click.option("--nb", type=int, default=None)
@click.option("--nrs", type=int, default=None)
@click.option("--brs", type=int, default=None)
@common_options
@click.pass_context
def sample_command(
    ctx: click.Context,
    recurrence: str,
    output: str | None,
    config: str | None,
    seed: int | None,
    cas_cmd: str | None,
    assignments: tuple[str, ...],
    verbose: bool,
    **flags: Any,
) -> None:
    """Write the training set of RECURRENCE as CSV."""

    _verbose(verbose)
    try:
        extra = {**_pairs(assignments), **{key: value for key, value in flags.items() if value is not None}}
        training = cmd_sample(load_recurrence(recurrence), _settings(config, seed, cas_cmd, extra))
    except ValueError as exc:
        _fail(ctx, exc)
        return
    if output:
        training.to_csv(output)
        click.echo(f"Wrote {len(training)} point(s) to {output}")
    else:
        buffer = io.StringIO()
        training.write_csv(buffer)
        click.echo(buffer.getvalue(), nl=False)
    ctx.exit(EXIT_PROVED)


def main() -> None:  # pragma: no cover - console entry point
    solver_cli()


if __name__ == "__main__":  # pragma: no cover
    main()
