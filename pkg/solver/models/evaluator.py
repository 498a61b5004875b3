"""Execute recurrences as programs: exact values, termination and training sets."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
import itertools
import logging
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from solver.models.expr import BuiltinDomainError, Point, eval_expr
from solver.models.recurrence import Recurrence

LOGGER = logging.getLogger(__name__)

DEFAULT_MAX_EXPANSIONS = 10**7
DEFAULT_VALUE_BITS_CAP = 4096


class EvalOutcome(str, Enum):
    VALUE = "value"
    DIVERGED = "diverged"
    CYCLE = "cycle"
    UNDEFINED = "undefined"
    OVERFLOW = "overflow"


@dataclass(frozen=True, slots=True)
class EvalStatus:
    """Outcome of evaluating the least solution at one point."""

    outcome: EvalOutcome
    value: Fraction | None = None
    chain: tuple[Point, ...] = ()
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is EvalOutcome.VALUE


class _Missing(Exception):
    def __init__(self, point: Point) -> None:
        super().__init__(point)
        self.point = point


class _Failed(Exception):
    def __init__(self, status: EvalStatus) -> None:
        super().__init__(status.detail)
        self.status = status


class RecurrenceEvaluator:
    """Memoised evaluation of ``lfp Φ`` with an explicit work stack."""

    def __init__(
        self,
        recurrence: Recurrence,
        *,
        max_expansions: int = DEFAULT_MAX_EXPANSIONS,
        value_bits_cap: int = DEFAULT_VALUE_BITS_CAP,
    ) -> None:
        self.recurrence = recurrence
        self.max_expansions = max_expansions
        self.value_bits_cap = value_bits_cap
        self._memo: dict[Point, Fraction] = {}
        self._failures: dict[Point, EvalStatus] = {}
        self._exhausted: dict[Point, tuple[int, EvalStatus]] = {}

    def value(self, point: Sequence[int]) -> Fraction | None:
        status = self.evaluate(point)
        return status.value if status.ok else None

    def evaluate(self, point: Sequence[int]) -> EvalStatus:
        start = tuple(int(x) for x in point)
        if start in self._memo:
            return EvalStatus(EvalOutcome.VALUE, self._memo[start])
        if start in self._failures:
            return self._failures[start]
        exhausted = self._exhausted_at(start)
        if exhausted is not None:
            return exhausted
        if not self.recurrence.in_domain(start):
            return EvalStatus(EvalOutcome.UNDEFINED, detail=f"{start} is outside the domain")

        stack: list[Point] = [start]
        on_stack: set[Point] = {start}
        expansions = 0
        while stack:
            top = stack[-1]
            case = self.recurrence.case_for(top)
            if case is None:
                return self._fail(
                    stack, EvalStatus(EvalOutcome.UNDEFINED, detail=f"no case covers {top}")
                )
            try:
                value = eval_expr(case.body, top, self._lookup)
            except _Missing as missing:
                target = missing.point
                if target in on_stack:
                    loop = tuple(stack[stack.index(target):]) + (target,)
                    return self._fail(
                        stack, EvalStatus(EvalOutcome.CYCLE, chain=loop, detail=f"{target} recurs")
                    )
                expansions += 1
                if expansions > self.max_expansions:
                    return self._fail(
                        stack,
                        EvalStatus(
                            EvalOutcome.DIVERGED,
                            detail=f"more than {self.max_expansions} expanded calls",
                        ),
                    )
                stack.append(target)
                on_stack.add(target)
                continue
            except _Failed as failed:
                return self._fail(stack, replace(failed.status, chain=tuple(stack)))
            except BuiltinDomainError as exc:
                return self._fail(stack, EvalStatus(EvalOutcome.UNDEFINED, detail=str(exc)))

            if value is None:
                return self._fail(
                    stack,
                    EvalStatus(EvalOutcome.UNDEFINED, detail=f"non-integer call argument at {top}"),
                )
            if self._too_large(value):
                return self._fail(
                    stack,
                    EvalStatus(EvalOutcome.OVERFLOW, detail=f"value at {top} exceeds {self.value_bits_cap} bits"),
                )
            self._memo[top] = value
            stack.pop()
            on_stack.discard(top)

        return EvalStatus(EvalOutcome.VALUE, self._memo[start])

    def _lookup(self, point: Point) -> Fraction:
        if point in self._memo:
            return self._memo[point]
        if point in self._failures:
            raise _Failed(self._failures[point])
        exhausted = self._exhausted_at(point)
        if exhausted is not None:
            raise _Failed(exhausted)
        if self.recurrence.case_index(point) is None:
            raise _Failed(EvalStatus(EvalOutcome.UNDEFINED, detail=f"call to {point} leaves the domain"))
        raise _Missing(point)

    def _too_large(self, value: Fraction) -> bool:
        bits = max(value.numerator.bit_length(), value.denominator.bit_length())
        return bits > self.value_bits_cap

    def _exhausted_at(self, point: Point) -> EvalStatus | None:
        """Budget exhaustion recorded under a budget at least as large as the current one."""

        entry = self._exhausted.get(point)
        if entry is None or entry[0] < self.max_expansions:
            return None
        return entry[1]

    def _fail(self, stack: Sequence[Point], status: EvalStatus) -> EvalStatus:
        if not status.chain:
            status = replace(status, chain=tuple(stack))
        if status.outcome is EvalOutcome.DIVERGED:
            for point in stack:
                self._exhausted[point] = (self.max_expansions, status)
        else:
            for point in stack:
                self._failures.setdefault(point, status)
        LOGGER.debug("Evaluation failed (%s): %s", status.outcome.value, status.detail)
        return status


def evaluate(r: Recurrence, point: Sequence[int], **options: int) -> EvalStatus:
    """One-shot evaluation with a fresh memo table."""

    return RecurrenceEvaluator(r, **options).evaluate(point)


@dataclass
class TerminationReport:
    """Sampled surrogate of the boolean abstraction of Φ."""

    checked: int
    terminating: list[Point] = field(default_factory=list)
    failing: dict[Point, EvalStatus] = field(default_factory=dict)

    @property
    def all_terminate(self) -> bool:
        return not self.failing


def check_termination_on_sample(
    r: Recurrence,
    sample: Iterable[Sequence[int]],
    evaluator: RecurrenceEvaluator | None = None,
) -> TerminationReport:
    """Mark each sample point ⊤ when its evaluation closes within budget, ⊥ otherwise."""

    evaluator = evaluator or RecurrenceEvaluator(r)
    report = TerminationReport(checked=0)
    for raw in sample:
        point = tuple(int(x) for x in raw)
        report.checked += 1
        status = evaluator.evaluate(point)
        if status.ok:
            report.terminating.append(point)
        else:
            report.failing[point] = status
    return report


def kleene_reference(r: Recurrence, point: Sequence[int], iterations: int) -> Fraction | None:
    """Value of ``Φ^iterations(⊥)`` at ``point`` over its call closure, no memoisation."""

    start = tuple(int(x) for x in point)
    if not r.in_domain(start):
        return None
    known: dict[Point, Fraction] = {}
    closure: set[Point] = {start}
    for _ in range(iterations):
        closure = _expand_closure(r, closure, known)
        step: dict[Point, Fraction] = {}
        for p in closure:
            value = _strict_apply(r, p, known)
            if value is not None:
                step[p] = value
        known = step
    return known.get(start)


def _strict_apply(r: Recurrence, point: Point, known: dict[Point, Fraction], seen: set[Point] | None = None) -> Fraction | None:
    def oracle(target: Point) -> Fraction | None:
        if seen is not None:
            seen.add(target)
        return known.get(target)

    try:
        return r.apply(point, oracle)
    except BuiltinDomainError:
        return None


def _expand_closure(r: Recurrence, closure: set[Point], known: dict[Point, Fraction]) -> set[Point]:
    expanded = set(closure)
    worklist = list(closure)
    while worklist:
        point = worklist.pop()
        seen: set[Point] = set()
        _strict_apply(r, point, known, seen)
        for target in seen:
            if target not in expanded and r.in_domain(target):
                expanded.add(target)
                worklist.append(target)
    return expanded


# ---------------------------------------------------------------------------
# Training sets


@dataclass(frozen=True, slots=True)
class SampleParams:
    """Sampling hyperparameters; ``bb=None`` derives the hypercube side from ``nb``."""

    nb: int = 50_000
    brs: int = 2_000
    nrs: int = 20_000
    seed: int = 0
    bb: int | None = None
    retry_bound: int = 15
    max_expansions: int = DEFAULT_MAX_EXPANSIONS
    value_bits_cap: int = DEFAULT_VALUE_BITS_CAP

    def __post_init__(self) -> None:
        if self.nb < 1 or self.nrs < 0 or self.brs < 0:
            raise ValueError("Sample sizes and bounds must be nonnegative (nb positive).")

    def hypercube_side(self, arity: int) -> int:
        if self.bb is not None:
            return self.bb
        return max(1, int(round(self.nb ** (1.0 / arity))) - 1)


@dataclass
class TrainingSet:
    """Exact values of the least solution on sampled domain points."""

    points: list[Point]
    values: list[Fraction]
    params: SampleParams
    failures: dict[Point, EvalStatus] = field(default_factory=dict)
    retried: bool = False

    def __post_init__(self) -> None:
        if len(self.points) != len(self.values):
            raise ValueError("Points and values must have the same length.")
        if len(set(self.points)) != len(self.points):
            raise ValueError("Training points must be unique.")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def arity(self) -> int:
        return len(self.points[0]) if self.points else 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.int64).reshape(len(self.points), self.arity)

    def value_array(self) -> np.ndarray:
        return np.asarray([float(value) for value in self.values], dtype=float)

    def lookup(self) -> dict[Point, Fraction]:
        return dict(zip(self.points, self.values))

    def subsample(self, fraction: float, seed: int) -> TrainingSet:
        """Uniform subsample keeping at least one point."""

        size = max(1, int(round(len(self.points) * fraction)))
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(self.points), size=min(size, len(self.points)), replace=False))
        return TrainingSet(
            [self.points[i] for i in chosen],
            [self.values[i] for i in chosen],
            self.params,
            retried=self.retried,
        )

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow([f"x{k + 1}" for k in range(self.arity)] + ["value"])
        for point, value in zip(self.points, self.values):
            writer.writerow(list(point) + [f"{value.numerator}/{value.denominator}"])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            self.write_csv(handle)


def sample_points(r: Recurrence, params: SampleParams) -> list[Point]:
    """Hypercube ``[0, Bb]^d`` plus uniform random points of ``[0, Brs]^d`` in the domain."""

    arity = r.arity
    side = params.hypercube_side(arity)
    ordered: dict[Point, None] = {}
    for point in itertools.product(range(side + 1), repeat=arity):
        ordered[tuple(point)] = None
    if params.nrs:
        rng = np.random.default_rng(params.seed)
        draws = rng.integers(0, params.brs + 1, size=(params.nrs, arity))
        for row in draws:
            ordered[tuple(int(x) for x in row)] = None
    return [point for point in ordered if r.in_domain(point)]


def generate_sample(
    r: Recurrence,
    params: SampleParams | None = None,
    evaluator: RecurrenceEvaluator | None = None,
) -> TrainingSet:
    """Evaluate the least solution on the sample, retrying with small inputs on overflow."""

    params = params or SampleParams()
    evaluator = evaluator or RecurrenceEvaluator(
        r, max_expansions=params.max_expansions, value_bits_cap=params.value_bits_cap
    )
    training = _evaluate_points(evaluator, sample_points(r, params), params)
    overflowed = any(s.outcome is EvalOutcome.OVERFLOW for s in training.failures.values())
    if not overflowed:
        LOGGER.debug("Sampled %d point(s), %d failure(s)", len(training), len(training.failures))
        return training

    small = replace(params, bb=params.retry_bound, brs=params.retry_bound)
    LOGGER.warning(
        "Values overflowed %d bits; retrying with inputs bounded by %d",
        params.value_bits_cap,
        params.retry_bound,
    )
    retried = _evaluate_points(evaluator, sample_points(r, small), small)
    retried.retried = True
    return retried


def _evaluate_points(
    evaluator: RecurrenceEvaluator, points: Sequence[Point], params: SampleParams
) -> TrainingSet:
    kept: list[Point] = []
    values: list[Fraction] = []
    failures: dict[Point, EvalStatus] = {}
    for point in sorted(points):
        status = evaluator.evaluate(point)
        if status.ok:
            kept.append(point)
            values.append(status.value)  # type: ignore[arg-type]
        else:
            failures[point] = status
    if failures:
        LOGGER.debug("Excluded %d sample point(s) whose evaluation failed", len(failures))
    return TrainingSet(kept, values, params, failures)
