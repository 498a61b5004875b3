"""Service layer orchestrating sampling, fitting, rounding, checking and repair."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
import io
import logging
from pathlib import Path
import time
from typing import IO, Any, Iterable, Sequence

import numpy as np

from backend.app.services.cas_client import CASBridge, CASBridgeError
from backend.config import SolverSettings, load_config_file
from solver.models.candidate import Candidate, CandidateCoverageError, Direction, single_piece
from solver.models.checker import CheckOptions, Verdict, VerdictStatus, check_inductive, hybrid_verify
from solver.models.dsl import RecurrenceFile, format_candidate, parse_candidate, parse_features, parse_recurrence_file
from solver.models.evaluator import (
    EvalOutcome,
    EvalStatus,
    RecurrenceEvaluator,
    SampleParams,
    TrainingSet,
    generate_sample,
)
from solver.models.expr import (
    BuiltinDomainError,
    Expr,
    ExprError,
    Guard,
    Point,
    Polynomial,
    arity_hint,
    normalize_polynomial,
)
from solver.models.modelspace import BankProfile, FeatureBank, default_bank
from solver.models.qpgen import QpError, SelectionParams, SolverParams, default_flags, fit_bounds
from solver.models.recurrence import Recurrence, classify, default_validation_points
from solver.models.regions import RegionNotEnumerableError
from solver.models.repair import repair_loop
from solver.models.rounding import RoundingStrategy, rationalize_candidate

LOGGER = logging.getLogger(__name__)

EXIT_PROVED = 0
EXIT_USAGE = 1
EXIT_UNKNOWN = 2
EXIT_REFUTED = 3

MAX_CHECKED_VARIANTS = 3
RAY_LENGTHS = (10, 100, 1_000, 10_000)
NEAR_EXACT_TOLERANCE = Fraction(1, 100)
EQUIVALENCE_TOLERANCE = 1e-3
THETA_DRIFT = 0.05

BENCH_COLUMNS = (
    "id",
    "name",
    "category",
    "lb_verdict",
    "ub_verdict",
    "lb_quality",
    "ub_quality",
    "lb_candidate",
    "ub_candidate",
    "seconds",
    "error",
)

_RANK = {VerdictStatus.REFUTED: 0, VerdictStatus.UNKNOWN: 1, VerdictStatus.PROVED: 2}


class QualitySymbol(str, Enum):
    """How close a bound is to a known reference solution."""

    EXACT = "✓"
    NEAR_EXACT = "✓̃"
    EQUIVALENT = "∼"
    APPROXIMATE = "≈"
    THETA = "Θ"
    OMEGA = "Ω"
    BIG_O = "O"
    NONE = "None"
    WRONG = "×"


# ---------------------------------------------------------------------------
# Settings helpers


def sample_params(settings: SolverSettings) -> SampleParams:
    return SampleParams(
        nb=settings.nb,
        brs=settings.brs,
        nrs=settings.nrs,
        seed=settings.seed,
        bb=settings.bb or None,
        retry_bound=settings.retry_bound,
        max_expansions=settings.max_expansions,
        value_bits_cap=settings.value_bits_cap,
    )


def solver_params(settings: SolverSettings) -> SolverParams:
    return SolverParams(
        max_kkt_steps=settings.kkt_steps,
        feas_tol=settings.feas_tol,
        abs_tol=settings.abs_tol,
        rel_tol=settings.rel_tol,
    )


def selection_params(settings: SolverSettings) -> SelectionParams:
    return SelectionParams(rounds=settings.lasso_rounds, subsample=settings.subsample, lasso=settings.lambda_)


def check_options(settings: SolverSettings) -> CheckOptions:
    return CheckOptions(finite_region_cap=settings.finite_region_cap)


def make_bridge(settings: SolverSettings) -> CASBridge | None:
    bridge = CASBridge(settings.cas_cmd, settings.cas_timeout_s, settings.cas_concurrency)
    return bridge if bridge.enabled else None


def make_evaluator(r: Recurrence, settings: SolverSettings) -> RecurrenceEvaluator:
    return RecurrenceEvaluator(r, max_expansions=settings.max_expansions, value_bits_cap=settings.value_bits_cap)


def load_recurrence(path: str | Path) -> RecurrenceFile:
    document = parse_recurrence_file(Path(path).read_text(encoding="utf-8"))
    if not document.metadata.get("name"):
        document.metadata["name"] = Path(path).stem
    return document


def directions_for(direction: str | Direction) -> list[Direction]:
    if direction == "both":
        return [Direction.LOWER, Direction.UPPER]
    return [Direction(direction)]


# ---------------------------------------------------------------------------
# Reports


@dataclass
class DirectionReport:
    """Outcome of one bound direction."""

    direction: Direction
    verdict: Verdict | None = None
    candidate: Candidate | None = None
    bank: str = ""
    float_coefficients: dict[str, float] = field(default_factory=dict)
    variants: int = 0
    repair_rounds: int = 0
    repairs: list[str] = field(default_factory=list)
    quality: QualitySymbol | None = None
    timings: dict[str, float] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def status(self) -> VerdictStatus:
        return self.verdict.status if self.verdict is not None else VerdictStatus.UNKNOWN

    def candidate_text(self, variables: Sequence[str]) -> str:
        if self.candidate is None:
            return ""
        return format_candidate(self.candidate, variables)

    def to_dict(self, variables: Sequence[str]) -> dict[str, Any]:
        return {
            "direction": self.direction.value,
            "verdict": self.verdict.to_dict() if self.verdict is not None else None,
            "candidate": self.candidate_text(variables),
            "bank": self.bank,
            "float_coefficients": self.float_coefficients,
            "variants": self.variants,
            "repair_rounds": self.repair_rounds,
            "repairs": self.repairs,
            "quality": self.quality.value if self.quality is not None else None,
            "timings": {stage: round(seconds, 4) for stage, seconds in self.timings.items()},
            "errors": self.errors,
        }


@dataclass
class SolveReport:
    """Everything ``cmd_solve`` learned about one equation."""

    name: str
    identifier: str
    variables: tuple[str, ...]
    settings: dict[str, Any]
    directions: dict[Direction, DirectionReport] = field(default_factory=dict)
    sample_size: int = 0
    sample_retried: bool = False
    termination_failures: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        statuses = [report.status for report in self.directions.values()]
        if not statuses:
            return EXIT_UNKNOWN
        if all(status is VerdictStatus.PROVED for status in statuses):
            return EXIT_PROVED
        if any(status is VerdictStatus.UNKNOWN for status in statuses):
            return EXIT_UNKNOWN
        return EXIT_REFUTED

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "id": self.identifier,
            "variables": list(self.variables),
            "settings": self.settings,
            "sample_size": self.sample_size,
            "sample_retried": self.sample_retried,
            "termination_failures": self.termination_failures,
            "timings": {stage: round(seconds, 4) for stage, seconds in self.timings.items()},
            "errors": self.errors,
            "directions": {
                direction.value: report.to_dict(self.variables) for direction, report in self.directions.items()
            },
            "exit_code": self.exit_code,
        }

    def render_text(self) -> str:
        lines = [f"Recurrence {self.name} over ({', '.join(self.variables)})"]
        lines.append(
            f"Sample: {self.sample_size} point(s)"
            + (" (small-input retry)" if self.sample_retried else "")
        )
        for direction, report in self.directions.items():
            verdict = report.verdict
            status = verdict.status.value if verdict is not None else "unknown"
            detail = ""
            if verdict is not None and verdict.is_refuted:
                detail = f" at {verdict.point} ({verdict.kind})"
            elif verdict is not None and verdict.reason:
                detail = f": {verdict.reason}"
            lines.append(f"[{direction.value}] {status}{detail}")
            if report.bank:
                lines.append(f"  bank: {report.bank}")
            for line in report.candidate_text(self.variables).splitlines()[1:]:
                lines.append(f"  {line}")
            if report.repairs:
                lines.append(f"  repairs: {', '.join(report.repairs)}")
            if report.quality is not None:
                lines.append(f"  quality: {report.quality.value}")
            for error in report.errors:
                lines.append(f"  error: {error}")
        for error in self.errors:
            lines.append(f"error: {error}")
        return "\n".join(lines) + "\n"


class _Stopwatch:
    def __init__(self, timings: dict[str, float], stage: str) -> None:
        self.timings = timings
        self.stage = stage

    def __enter__(self) -> _Stopwatch:
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc: object) -> None:
        self.timings[self.stage] = self.timings.get(self.stage, 0.0) + time.perf_counter() - self.start


# ---------------------------------------------------------------------------
# solve


def _profiles(settings: SolverSettings, ts: TrainingSet) -> list[BankProfile]:
    if settings.bank != "auto":
        return [BankProfile(settings.bank)]
    if ts.retried:
        return [BankProfile.FASTGROW]
    return [BankProfile.POLY2, BankProfile.POLY2_LOG]


def _termination_failures(ts: TrainingSet) -> list[Point]:
    return [point for point, status in ts.failures.items() if status.outcome is not EvalOutcome.OVERFLOW]


def _repair_sample(ts: TrainingSet, settings: SolverSettings) -> list[Point]:
    if len(ts) <= settings.recheck_points:
        return list(ts.points)
    return list(ts.subsample(settings.recheck_points / len(ts), settings.seed).points)


def _solve_direction(
    r: Recurrence,
    document: RecurrenceFile,
    ts: TrainingSet,
    direction: Direction,
    bank: FeatureBank,
    settings: SolverSettings,
    evaluator: RecurrenceEvaluator,
    bridge: CASBridge | None,
) -> DirectionReport:
    report = DirectionReport(direction, bank=bank.profile.value)
    flags = default_flags(classify(r), seed=settings.seed, max_rows=settings.max_rows)
    options = check_options(settings)

    with _Stopwatch(report.timings, "fit"):
        try:
            fit, fitted = fit_bounds(
                r,
                ts,
                bank,
                direction,
                flags=flags,
                params=solver_params(settings),
                selection=selection_params(settings),
                recheck_points=settings.recheck_points,
            )
        except (QpError, ValueError) as exc:
            LOGGER.warning("Fitting the %s bound of %s failed: %s", direction.value, document.metadata.get("name"), exc)
            report.errors.append(f"fit: {exc}")
            return report
    report.float_coefficients = {name: float(value) for name, value in zip(fit.selected, fit.alpha)}

    with _Stopwatch(report.timings, "rationalize"):
        strategy = RoundingStrategy(max_denominator=settings.max_denominator)
        variants = rationalize_candidate(
            fitted,
            strategy,
            recurrence=r,
            training=ts,
            recheck_points=settings.recheck_points,
            require_inductive=flags.inductivity,
            seed=settings.seed,
        )
        if not variants:
            variants = rationalize_candidate(fitted, strategy)[-1:]
    report.variants = len(variants)

    best: tuple[Candidate, Verdict] | None = None
    with _Stopwatch(report.timings, "check"):
        for variant in variants[:MAX_CHECKED_VARIANTS]:
            verdict = check_inductive(r, variant, options, fallback=bridge, evaluator=evaluator)
            if best is None or _RANK[verdict.status] > _RANK[best[1].status]:
                best = (variant, verdict)
            if verdict.is_proved:
                break
    assert best is not None
    report.candidate, report.verdict = best

    if settings.repair and not report.verdict.is_proved:
        with _Stopwatch(report.timings, "repair"):
            try:
                outcome = repair_loop(
                    r,
                    report.candidate,
                    settings.repair_budget,
                    sample=_repair_sample(ts, settings),
                    evaluator=evaluator,
                    options=options,
                    fallback=bridge,
                    seed=settings.seed,
                )
            except (RegionNotEnumerableError, ValueError, RuntimeError) as exc:
                LOGGER.warning("Repair of the %s bound failed: %s", direction.value, exc)
                report.errors.append(f"repair: {exc}")
            else:
                report.repair_rounds = outcome.rounds
                report.repairs = [plan.label or plan.kind.value for plan in outcome.plans]
                if _RANK[outcome.verdict.status] >= _RANK[report.verdict.status]:
                    report.candidate, report.verdict = outcome.candidate, outcome.verdict
    return report


def _better(current: DirectionReport | None, challenger: DirectionReport) -> bool:
    if current is None:
        return True
    if challenger.candidate is None:
        return False
    if current.candidate is None:
        return True
    return _RANK[challenger.status] > _RANK[current.status]


def cmd_solve(
    document: RecurrenceFile,
    direction: str | Direction = "both",
    settings: SolverSettings | None = None,
    *,
    reference: Candidate | Expr | None = None,
    features: str | None = None,
    bridge: CASBridge | None = None,
) -> SolveReport:
    """Sample, fit, rationalize, check and repair one equation in the requested directions."""

    settings = settings or SolverSettings()
    bridge = bridge if bridge is not None else make_bridge(settings)
    report = SolveReport(
        name=document.metadata.get("name", ""),
        identifier=document.identifier,
        variables=document.variables,
        settings=settings.as_dict(),
    )
    r = document.build()
    evaluator = make_evaluator(r, settings)

    with _Stopwatch(report.timings, "sample"):
        ts = generate_sample(r, sample_params(settings), evaluator)
    report.sample_size = len(ts)
    report.sample_retried = ts.retried
    nonterminating = _termination_failures(ts)
    report.termination_failures = len(nonterminating)
    LOGGER.info("Sampled %d point(s) for %s", len(ts), report.name or "recurrence")

    if not len(ts):
        report.errors.append("sample: the least solution is undefined on every sampled point")
        for wanted in directions_for(direction):
            report.directions[wanted] = DirectionReport(
                wanted, verdict=Verdict.unknown("no training data"), errors=["sample: empty"]
            )
        return report

    if features is not None:
        banks = [FeatureBank.from_exprs(parse_features(features, document.variables))]
    else:
        banks = [
            default_bank(r.arity, profile, names=document.variables, degree=settings.degree)
            for profile in _profiles(settings, ts)
        ]

    for wanted in directions_for(direction):
        chosen: DirectionReport | None = None
        for bank in banks:
            try:
                attempt = _solve_direction(r, document, ts, wanted, bank, settings, evaluator, bridge)
            except CASBridgeError as exc:
                LOGGER.warning("CAS bridge failed during the %s check: %s", wanted.value, exc)
                attempt = DirectionReport(wanted, bank=bank.profile.value, errors=[f"cas: {exc}"])
            if _better(chosen, attempt):
                chosen = attempt
            if chosen.verdict is not None and chosen.verdict.is_proved:
                break
        assert chosen is not None
        if wanted is Direction.LOWER and nonterminating and chosen.verdict is not None and chosen.verdict.is_proved:
            chosen.verdict = Verdict.unknown(
                f"termination not established on {len(nonterminating)} sampled point(s)", method=chosen.verdict.method
            )
        if chosen.verdict is None:
            chosen.verdict = Verdict.unknown("; ".join(chosen.errors) or "no candidate")
        if reference is not None:
            chosen.quality = classify_quality(chosen.candidate, reference, domain=r, seed=settings.seed)
        report.directions[wanted] = chosen
        LOGGER.info("%s bound of %s: %s", wanted.value.capitalize(), report.name or "recurrence", chosen.status.value)
    return report


# ---------------------------------------------------------------------------
# check, eval, sample


def _termination_downgrade(r: Recurrence, verdict: Verdict, evaluator: RecurrenceEvaluator) -> Verdict:
    failing = [
        point
        for point in default_validation_points(r.arity)
        if r.in_domain(point) and evaluator.evaluate(point).outcome is not EvalOutcome.VALUE
    ]
    if not failing:
        return verdict
    return Verdict.unknown(f"termination not established at {failing[0]}", method=verdict.method)


def cmd_check(
    document: RecurrenceFile,
    candidate_text: str,
    direction: str | Direction = "upper",
    settings: SolverSettings | None = None,
    *,
    d1: Guard | None = None,
    d2: Guard | Sequence[Guard] | None = None,
    bridge: CASBridge | None = None,
) -> Verdict:
    """Check a user candidate, optionally through a finite region ``d1`` composed with ``d2``."""

    settings = settings or SolverSettings()
    bridge = bridge if bridge is not None else make_bridge(settings)
    r = document.build()
    candidate = parse_candidate(candidate_text, document.variables, Direction(direction))
    evaluator = make_evaluator(r, settings)
    options = check_options(settings)
    if d1 is not None:
        second = d2 if d2 is not None else d1.complement()
        verdict = hybrid_verify(r, candidate, d1, second, options, evaluator=evaluator, fallback=bridge)
    else:
        verdict = check_inductive(r, candidate, options, fallback=bridge, evaluator=evaluator)
    if candidate.direction is Direction.LOWER and verdict.is_proved:
        verdict = _termination_downgrade(r, verdict, evaluator)
    LOGGER.info("Checked %s candidate: %s", candidate.direction.value, verdict.status.value)
    return verdict


def cmd_eval(document: RecurrenceFile, point: Sequence[int], settings: SolverSettings | None = None) -> EvalStatus:
    settings = settings or SolverSettings()
    r = document.build()
    if len(point) != r.arity:
        raise ValueError(f"Expected {r.arity} coordinate(s), got {len(point)}.")
    return make_evaluator(r, settings).evaluate(tuple(int(x) for x in point))


def cmd_sample(document: RecurrenceFile, settings: SolverSettings | None = None) -> TrainingSet:
    settings = settings or SolverSettings()
    r = document.build()
    return generate_sample(r, sample_params(settings), make_evaluator(r, settings))


# ---------------------------------------------------------------------------
# Quality


def default_quality_rays(arity: int, seed: int = 0) -> list[tuple[int, ...]]:
    """Axis rays, the diagonal and three random positive directions."""

    rays: list[tuple[int, ...]] = []
    for index in range(arity):
        rays.append(tuple(1 if k == index else 0 for k in range(arity)))
    rays.append(tuple(1 for _ in range(arity)))
    rng = np.random.default_rng(seed)
    for _ in range(3):
        rays.append(tuple(int(x) for x in rng.integers(1, 6, size=arity)))
    return list(dict.fromkeys(rays))


def _ray_point(ray: Sequence[int], length: int) -> Point:
    top = max(ray)
    return tuple(length * c // top for c in ray)


def _value(candidate: Candidate, point: Point) -> Fraction | None:
    try:
        return candidate.evaluate(point)
    except (CandidateCoverageError, BuiltinDomainError, ExprError):
        return None


def _near_exact(candidate: Candidate, reference: Candidate, points: Iterable[Point]) -> bool:
    pairs = set()
    for point in points:
        mine = candidate.piece_for(point)
        theirs = reference.piece_for(point)
        if mine is None or theirs is None:
            continue
        if mine.is_table or theirs.is_table:
            return False
        pairs.add((mine.expr, theirs.expr))
    if not pairs:
        return False
    for mine_expr, theirs_expr in pairs:
        mine_poly = normalize_polynomial(mine_expr)
        theirs_poly = normalize_polynomial(theirs_expr)
        if not isinstance(mine_poly, Polynomial) or not isinstance(theirs_poly, Polynomial):
            return False
        width = max(mine_poly.nvars, theirs_poly.nvars)
        mine_terms = _pad_terms(mine_poly, width)
        theirs_terms = _pad_terms(theirs_poly, width)
        for exps in set(mine_terms) | set(theirs_terms):
            a = mine_terms.get(exps, Fraction(0))
            b = theirs_terms.get(exps, Fraction(0))
            if b == 0 and a != 0 and any(exps):
                return False
            if abs(a - b) > NEAR_EXACT_TOLERANCE * max(abs(b), Fraction(1)):
                return False
    return True


def _pad_terms(poly: Polynomial, width: int) -> dict[tuple[int, ...], Fraction]:
    return {exps + (0,) * (width - len(exps)): value for exps, value in poly.terms.items()}


def _ratio(mine: Fraction, theirs: Fraction) -> float:
    if theirs == 0:
        return 1.0 if mine == 0 else float("inf")
    return float(mine / theirs)


def classify_quality(
    candidate: Candidate | None,
    reference: Candidate | Expr,
    rays: Sequence[Sequence[int]] | None = None,
    *,
    domain: Recurrence | None = None,
    seed: int = 0,
) -> QualitySymbol:
    """Compare a bound with a reference solution on a grid and along diverging rays."""

    if candidate is None:
        return QualitySymbol.NONE
    if not isinstance(reference, Candidate):
        reference = single_piece(reference, candidate.direction)
    arity = domain.arity if domain is not None else max(1, _arity_of(candidate, reference))
    rays = [tuple(int(c) for c in ray) for ray in (rays or default_quality_rays(arity, seed))]

    def usable(point: Point) -> bool:
        return domain is None or domain.in_domain(point)

    grid = [point for point in default_validation_points(arity) if usable(point)]
    ray_points = {ray: [p for p in (_ray_point(ray, n) for n in RAY_LENGTHS) if usable(p)] for ray in rays}

    sign = candidate.direction.sign
    compared = 0
    equal = True
    for point in grid + [p for points in ray_points.values() for p in points]:
        mine = _value(candidate, point)
        theirs = _value(reference, point)
        if mine is None or theirs is None:
            continue
        compared += 1
        if (theirs - mine) * sign > 0:
            return QualitySymbol.WRONG
        equal = equal and mine == theirs
    if not compared:
        return QualitySymbol.NONE
    if equal:
        return QualitySymbol.EXACT
    if _near_exact(candidate, reference, grid):
        return QualitySymbol.NEAR_EXACT

    finals: list[float] = []
    drifts: list[float] = []
    for points in ray_points.values():
        ratios = []
        for point in points:
            mine = _value(candidate, point)
            theirs = _value(reference, point)
            if mine is not None and theirs is not None:
                ratios.append(_ratio(mine, theirs))
        if len(ratios) < 2:
            continue
        finals.append(ratios[-1])
        previous = ratios[-2]
        drifts.append(abs(ratios[-1] - previous) / abs(previous) if previous not in (0.0, float("inf")) else float("inf"))
    if finals:
        close = [abs(value - 1.0) < EQUIVALENCE_TOLERANCE for value in finals]
        if all(close):
            return QualitySymbol.EQUIVALENT
        if any(close):
            return QualitySymbol.APPROXIMATE
        if all(1e-6 < value < 1e6 for value in finals) and all(drift <= THETA_DRIFT for drift in drifts):
            return QualitySymbol.THETA
    return QualitySymbol.OMEGA if candidate.direction is Direction.LOWER else QualitySymbol.BIG_O


def _arity_of(*candidates: Candidate) -> int:
    width = 0
    for candidate in candidates:
        for piece in candidate.pieces:
            if piece.expr is not None:
                width = max(width, arity_hint(piece.expr))
            width = max(width, *(len(c.coeffs) for c in piece.guard.constraints), 0)
    return width


# ---------------------------------------------------------------------------
# bench


@dataclass
class BenchRow:
    id: str
    name: str
    category: str
    lb_verdict: str = ""
    ub_verdict: str = ""
    lb_quality: str = ""
    ub_quality: str = ""
    lb_candidate: str = ""
    ub_candidate: str = ""
    seconds: float = 0.0
    error: str = ""

    def as_row(self) -> list[str]:
        values = [getattr(self, column) for column in BENCH_COLUMNS]
        return [f"{value:.3f}" if isinstance(value, float) else str(value) for value in values]

    @property
    def sort_key(self) -> tuple[int, str]:
        return (int(self.id), self.name) if self.id.isdigit() else (10**9, self.name)


@dataclass
class BenchTable:
    rows: list[BenchRow] = field(default_factory=list)

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for row in self.rows:
            writer.writerow(row.as_row())

    def to_csv(self) -> str:
        buffer = io.StringIO()
        self.write_csv(buffer)
        return buffer.getvalue()

    def render_text(self) -> str:
        lines = [f"{'id':>3}  {'name':<16} {'category':<14} {'lb':<8} {'ub':<8} {'quality':<12} {'seconds':>8}"]
        for row in self.rows:
            quality = f"[{row.lb_quality or '-'}, {row.ub_quality or '-'}]"
            lines.append(
                f"{row.id:>3}  {row.name:<16} {row.category:<14} {row.lb_verdict or '-':<8} "
                f"{row.ub_verdict or '-':<8} {quality:<12} {row.seconds:>8.2f}"
            )
            if row.error:
                lines.append(f"     error: {row.error}")
        return "\n".join(lines) + "\n"


def _one_line(candidate_text: str) -> str:
    return " | ".join(candidate_text.strip().splitlines()[1:])


def run_benchmark(path: str, settings: SolverSettings) -> BenchRow:
    """One suite entry; every failure is captured in the row."""

    source = Path(path)
    started = time.perf_counter()
    row = BenchRow(id="", name=source.stem, category="")
    try:
        document = load_recurrence(source)
        row.id = document.identifier
        row.name = document.metadata.get("name", source.stem)
        row.category = document.metadata.get("category", "")
        config = source.with_suffix(".cfg")
        if config.exists():
            settings = settings.with_overrides(load_config_file(config))
        reference_file = source.with_suffix(".ref")
        reference = None
        if reference_file.exists():
            reference = parse_candidate(reference_file.read_text(encoding="utf-8"), document.variables)
        report = cmd_solve(document, "both", settings, reference=reference)
        lower = report.directions.get(Direction.LOWER)
        upper = report.directions.get(Direction.UPPER)
        if lower is not None:
            row.lb_verdict = lower.status.value
            row.lb_quality = lower.quality.value if lower.quality is not None else ""
            row.lb_candidate = _one_line(lower.candidate_text(document.variables))
        if upper is not None:
            row.ub_verdict = upper.status.value
            row.ub_quality = upper.quality.value if upper.quality is not None else ""
            row.ub_candidate = _one_line(upper.candidate_text(document.variables))
        row.error = "; ".join(report.errors + [e for d in report.directions.values() for e in d.errors])
    except Exception as exc:  # noqa: BLE001
        LOGGER.warning("Benchmark %s failed: %s", source.name, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    row.seconds = time.perf_counter() - started
    return row


def cmd_bench(suite: str | Path, settings: SolverSettings | None = None, *, workers: int | None = None) -> BenchTable:
    """Solve every ``.rec`` file of a suite directory, in a worker pool."""

    settings = settings or SolverSettings()
    directory = Path(suite)
    if not directory.is_dir():
        raise ValueError(f"Benchmark suite {suite} is not a directory.")
    files = sorted(str(path) for path in directory.glob("*.rec"))
    width = workers or settings.bench_workers
    LOGGER.info("Running %d benchmark(s) with %d worker(s)", len(files), width)
    if width <= 1 or len(files) <= 1:
        rows = [run_benchmark(path, settings) for path in files]
    else:
        with ProcessPoolExecutor(max_workers=width) as pool:
            rows = list(pool.map(run_benchmark, files, [settings] * len(files)))
    return BenchTable(sorted(rows, key=lambda row: row.sort_key))
