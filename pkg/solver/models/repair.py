"""Repairs for near-miss candidates: local tables, additive rays and precomposition."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
import logging
from typing import Callable, Sequence

import numpy as np

from solver.models.candidate import Candidate, CandidateCoverageError, Piece, Provenance
from solver.models.checker import CheckOptions, Fallback, Verdict, VerdictStatus, check_inductive, check_ranking, falsify
from solver.models.evaluator import RecurrenceEvaluator
from solver.models.expr import (
    BuiltinDomainError,
    CeilDiv,
    Const,
    Expr,
    ExprError,
    Guard,
    Point,
    Var,
    affine_form,
    eval_expr,
    linear_combination,
    power,
    substitute,
)
from solver.models.recurrence import (
    NotAffineError,
    Recurrence,
    affine_cases,
    classify,
    default_validation_points,
    interface_points,
    linearise,
)
from solver.models.regions import RegionNotEnumerableError, enumerate_points
from solver.models.rounding import best_rational_bounds

LOGGER = logging.getLogger(__name__)

LOCAL_REGION_CAP = 10**6
SMALL_DEFECT = Fraction(1, 1000)
SCALE_DENOMINATOR = 1000
SHIFTS = (1, 2, 4, 8)
SCALES = (Fraction(11, 10), Fraction(6, 5), Fraction(3, 2), Fraction(2))


class RepairError(RuntimeError):
    """Raised when a repair strategy cannot produce a candidate."""


class RepairKind(str, Enum):
    LOCAL = "local"
    ADDITIVE = "additive"
    PRECOMPOSE = "precompose"


@dataclass(frozen=True)
class RepairPlan:
    kind: RepairKind
    region: Guard | None = None
    ray: Expr | None = None
    scale: Fraction | None = None
    mapping: tuple[Expr, ...] | None = None
    label: str = ""


@dataclass(frozen=True)
class LocalRepair:
    """Patched candidate plus the hybrid obligations it leaves behind."""

    candidate: Candidate
    plan: RepairPlan
    d1: Guard
    d2: tuple[Guard, ...]
    interface: frozenset[Point]


@dataclass
class RepairOutcome:
    candidate: Candidate
    verdict: Verdict
    plans: list[RepairPlan] = field(default_factory=list)
    rounds: int = 0


def _default_sample(r: Recurrence, sample: Sequence[Point] | None) -> list[Point]:
    points = sample if sample is not None else default_validation_points(r.arity)
    return [tuple(int(x) for x in p) for p in points if r.in_domain(tuple(int(x) for x in p))]


# ---------------------------------------------------------------------------
# Local repair


def _bounding_box(points: Sequence[Point]) -> Guard:
    lower = [min(p[k] for p in points) for k in range(len(points[0]))]
    upper = [max(p[k] for p in points) for k in range(len(points[0]))]
    return Guard.box(upper, lower)


def repair_local(
    r: Recurrence,
    candidate: Candidate,
    failing: Sequence[Point] | Guard,
    *,
    evaluator: RecurrenceEvaluator | None = None,
    slack: Fraction = Fraction(0),
    cap: int = LOCAL_REGION_CAP,
    sample: Sequence[Point] | None = None,
) -> LocalRepair:
    """Replace the candidate on a finite region by exact values of the least solution."""

    if isinstance(failing, Guard):
        region = failing
    else:
        points = [tuple(int(x) for x in p) for p in failing]
        if not points:
            plan = RepairPlan(RepairKind.LOCAL, label="nothing to patch")
            return LocalRepair(candidate, plan, Guard.true(), (), frozenset())
        region = _bounding_box(points)

    inside = enumerate_points(region.conjoin(r.domain), r.arity, cap)
    if inside is None:
        raise RegionNotEnumerableError(f"Local repair region is not enumerable within {cap} points.")
    evaluator = evaluator or RecurrenceEvaluator(r)
    offset = slack * candidate.direction.sign
    table: dict[Point, Fraction] = {}
    for point in inside:
        status = evaluator.evaluate(point)
        if not status.ok:
            raise RepairError(f"Least solution is {status.outcome.value} at {point}.")
        assert status.value is not None
        table[point] = status.value + offset

    patched = Candidate(
        (Piece(region, table=table),) + tuple(candidate.pieces),
        candidate.direction,
        Provenance.REPAIR,
        label=f"{candidate.label} + local".strip(" +"),
    )
    d2 = tuple(region.complement())
    scope = _default_sample(r, sample)
    interface = frozenset(
        point
        for guard in d2
        for point in interface_points(r, guard, region, scope, oracle=evaluator.value)
    )
    LOGGER.debug("Local repair patched %d point(s); interface has %d point(s)", len(table), len(interface))
    plan = RepairPlan(RepairKind.LOCAL, region=region, label=f"table on {len(table)} point(s)")
    return LocalRepair(patched, plan, region, d2, interface)


# ---------------------------------------------------------------------------
# Additive repair


def default_rays(r: Recurrence) -> list[Expr]:
    """``x_i``, ``Σx_i`` and ``1``, plus exponential rays for equations that are not linear-recursive."""

    eq = classify(r)
    coords: list[Expr] = [Var(k) for k in range(r.arity)]
    rays: list[Expr] = list(coords)
    if r.arity > 1:
        rays.append(linear_combination([(Fraction(1), v) for v in coords]))
    rays.append(Const(1))
    if eq.affine and not eq.linear_recursive:
        growth = 1
        for case in affine_cases(r):
            total = Fraction(0)
            for term in case.terms:
                value = eval_expr(term.coefficient, (0,) * r.arity)
                total += value if value is not None else 0
            growth = max(growth, int(total))
        for base in sorted({max(2, growth), growth + 1}):
            rays.extend(power(base, coord) for coord in coords)
    return rays


def _ray_oracle(r: Recurrence, candidate: Candidate, ray: Expr) -> Callable[[Point], Fraction]:
    """The ray restricted to recursive cases outside table pieces, ``0`` elsewhere."""

    def oracle(point: Point) -> Fraction:
        case = r.case_for(point)
        if case is None or not case.recursive:
            return Fraction(0)
        piece = candidate.piece_for(point)
        if piece is not None and piece.is_table:
            return Fraction(0)
        value = eval_expr(ray, point)
        return value if value is not None else Fraction(0)

    return oracle


def minimal_scale(
    r: Recurrence, candidate: Candidate, ray: Expr, sample: Sequence[Point]
) -> Fraction | None:
    """Smallest ``s >= 0`` such that ``f̂ ± s·ray`` has the right measure sign on ``sample``.

    ``None`` when no scale works.
    """

    lin = linearise(r)
    oracle = _ray_oracle(r, candidate, ray)
    sign = candidate.direction.sign
    needed = Fraction(0)
    ceiling: Fraction | None = None
    for point in sample:
        try:
            measure = candidate.measure(r, point)
            applied = lin.apply(point, oracle)
        except (CandidateCoverageError, BuiltinDomainError, ExprError):
            continue
        if measure is None or applied is None:
            continue
        excess = measure * sign
        drift = applied - oracle(point)
        if excess > 0:
            if drift >= 0:
                return None
            needed = max(needed, excess / -drift)
        elif drift > 0:
            limit = -excess / drift
            ceiling = limit if ceiling is None else min(ceiling, limit)
    if ceiling is not None and needed > ceiling:
        return None
    if needed == 0:
        return Fraction(0)
    _, upper = best_rational_bounds(needed, SCALE_DENOMINATOR)
    if ceiling is not None and upper > ceiling:
        upper = needed
    return upper


def _add_ray(r: Recurrence, candidate: Candidate, ray: Expr, scale: Fraction) -> Candidate:
    """``f̂ ± scale·ray`` on recursive cases; tables and base-case values are kept."""

    step = Const(scale * candidate.direction.sign)
    pieces: list[Piece] = list(candidate.table_pieces)
    for piece in candidate.expr_pieces:
        for case in r.cases:
            guard = piece.guard.conjoin(case.guard)
            if guard.bounds(r.arity) is None:
                continue
            expr = piece.expr + step * ray if case.recursive else piece.expr  # type: ignore[operator]
            pieces.append(Piece(guard, expr))
    return Candidate(tuple(pieces), candidate.direction, Provenance.REPAIR, label=candidate.label)


def repair_additive(
    r: Recurrence,
    candidate: Candidate,
    rays: Sequence[Expr] | None = None,
    *,
    sample: Sequence[Point] | None = None,
    check_rays: bool = True,
) -> tuple[Candidate, RepairPlan]:
    """Add the scaled ray that restores the measure sign at the lowest cost on the sample."""

    if not classify(r).affine:
        raise NotAffineError("Additive repair needs an affine equation.")
    points = _default_sample(r, sample)
    rays = list(rays) if rays is not None else default_rays(r)
    best: tuple[Fraction, Candidate, RepairPlan] | None = None
    for ray in rays:
        if check_rays and check_ranking(r, ray, quasi=True, options=CheckOptions(falsify_points=points[:400])).is_refuted:
            LOGGER.debug("Ray %r is not a quasi-ranking function; skipped", ray)
            continue
        scale = minimal_scale(r, candidate, ray, points)
        if scale is None:
            continue
        if scale == 0:
            return candidate, RepairPlan(RepairKind.ADDITIVE, ray=ray, scale=Fraction(0), label="already inductive")
        repaired = _add_ray(r, candidate, ray, scale)
        cost = sum(
            (abs(eval_expr(ray, p) or 0) for p in points[:500]),
            Fraction(0),
        ) * scale
        plan = RepairPlan(RepairKind.ADDITIVE, ray=ray, scale=scale, label=f"scale {scale}")
        if best is None or cost < best[0]:
            best = (cost, repaired, plan)
    if best is None:
        raise RepairError("No ray scale restores the sampled measure sign.")
    LOGGER.debug("Additive repair chose %s", best[2].label)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Precomposition


def default_maps(arity: int) -> list[tuple[str, tuple[Expr, ...]]]:
    """Shifts of all variables and of each variable, then ceiling rescalings."""

    maps: list[tuple[str, tuple[Expr, ...]]] = []
    for shift in SHIFTS:
        maps.append((f"x+{shift}", tuple(Var(k) + shift for k in range(arity))))
        if arity > 1:
            for var in range(arity):
                maps.append(
                    (
                        f"x{var + 1}+{shift}",
                        tuple(Var(k) + shift if k == var else Var(k) for k in range(arity)),
                    )
                )
    for beta in SCALES:
        maps.append(
            (
                f"ceil({beta}x)",
                tuple(CeilDiv(Const(beta.numerator) * Var(k), beta.denominator) for k in range(arity)),
            )
        )
    return maps


def repair_precompose(
    r: Recurrence,
    candidate: Candidate,
    maps: Sequence[tuple[str, tuple[Expr, ...]]] | None = None,
    *,
    sample: Sequence[Point] | None = None,
    evaluator: RecurrenceEvaluator | None = None,
) -> tuple[Candidate, RepairPlan]:
    """Tightest precomposed variant whose sampled measure and dominance both hold."""

    points = _default_sample(r, sample)
    evaluator = evaluator or RecurrenceEvaluator(r)
    maps = list(maps) if maps is not None else default_maps(r.arity)
    if not falsify(r, candidate, points, evaluator=evaluator).refuted:
        return candidate, RepairPlan(RepairKind.PRECOMPOSE, label="already inductive on the sample")

    best: tuple[Fraction, Candidate, RepairPlan] | None = None
    for label, mapping in maps:
        if any(affine_form(e, r.arity) is None and not isinstance(e, CeilDiv) for e in mapping):
            raise ValueError(f"Map {label} is neither affine nor a ceiling rescale.")
        variant = candidate.map_exprs(lambda e, m=mapping: substitute(e, m)).with_provenance(Provenance.REPAIR)
        report = falsify(r, variant, points, evaluator=evaluator)
        if report.refuted:
            continue
        gap = Fraction(0)
        for point in points:
            status = evaluator.evaluate(point)
            if status.ok:
                assert status.value is not None
                gap += abs(variant.evaluate(point) - status.value)
        plan = RepairPlan(RepairKind.PRECOMPOSE, mapping=mapping, label=label)
        if best is None or gap < best[0]:
            best = (gap, variant, plan)
    if best is None:
        raise RepairError("No precomposition map passes the sampled recheck.")
    LOGGER.debug("Precomposition chose %s", best[2].label)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Orchestration

_RANK = {VerdictStatus.REFUTED: 0, VerdictStatus.UNKNOWN: 1, VerdictStatus.PROVED: 2}


@dataclass(frozen=True)
class FailureProfile:
    points: tuple[Point, ...]
    max_violation: Fraction
    scale: Fraction

    @property
    def relative(self) -> Fraction:
        return self.max_violation / self.scale if self.scale else self.max_violation

    def within(self, side: int) -> bool:
        return all(max(point) <= side for point in self.points)


def failure_profile(
    r: Recurrence, candidate: Candidate, sample: Sequence[Point], evaluator: RecurrenceEvaluator
) -> FailureProfile:
    """Every sampled dominance or measure violation, with the largest one relative to ``|f_sol|``."""

    sign = candidate.direction.sign
    failing: list[Point] = []
    worst = Fraction(0)
    magnitude = Fraction(0)
    for point in sample:
        status = evaluator.evaluate(point)
        try:
            claimed = candidate.evaluate(point)
            measure = candidate.measure(r, point)
        except (CandidateCoverageError, BuiltinDomainError, ExprError):
            continue
        excess = Fraction(0)
        if status.ok:
            assert status.value is not None
            magnitude = max(magnitude, abs(status.value))
            excess = max(excess, (status.value - claimed) * sign)
        if measure is not None:
            excess = max(excess, measure * sign)
        if excess > 0:
            failing.append(point)
            worst = max(worst, excess)
    return FailureProfile(tuple(failing), worst, magnitude)


def fresh_points(r: Recurrence, exclude: Sequence[Point], count: int, side: int, seed: int) -> list[Point]:
    """Seeded random domain points in ``[0, side]^d`` that avoid ``exclude``."""

    rng = np.random.default_rng(seed)
    taken = set(exclude)
    found: list[Point] = []
    for _ in range(count * 20):
        point = tuple(int(x) for x in rng.integers(0, side + 1, size=r.arity))
        if point in taken or not r.in_domain(point):
            continue
        taken.add(point)
        found.append(point)
        if len(found) >= count:
            break
    return found


def repair_loop(
    r: Recurrence,
    candidate: Candidate,
    budget: int = 3,
    *,
    sample: Sequence[Point] | None = None,
    evaluator: RecurrenceEvaluator | None = None,
    options: CheckOptions | None = None,
    fallback: Fallback | None = None,
    local_side: int | None = None,
    seed: int = 0,
) -> RepairOutcome:
    """Check, classify the failure, repair and re-check, at most ``budget`` times."""

    evaluator = evaluator or RecurrenceEvaluator(r)
    points = _default_sample(r, sample)
    side = local_side if local_side is not None else 2 * max((max(p) for p in points), default=0)
    verdict = check_inductive(r, candidate, options, fallback=fallback, evaluator=evaluator)
    outcome = RepairOutcome(candidate, verdict)

    for round_ in range(1, budget + 1):
        if outcome.verdict.is_proved:
            break
        profile = failure_profile(r, outcome.candidate, points, evaluator)
        if not profile.points:
            LOGGER.info("No sampled violation to repair; keeping the %s verdict", outcome.verdict.status.value)
            break
        outcome.rounds = round_
        order = _strategies(profile, side)
        LOGGER.debug("Repair round %d: %d failing point(s), order %s", round_, len(profile.points), order)
        accepted = False
        for kind in order:
            try:
                repaired, plan = _apply(kind, r, outcome.candidate, profile, points, evaluator)
            except (RepairError, RegionNotEnumerableError, NotAffineError, ValueError) as exc:
                LOGGER.debug("%s repair failed: %s", kind.value, exc)
                continue
            if repaired is outcome.candidate:
                continue
            fresh = fresh_points(r, points, min(len(points), 1000), side or 1, seed + round_)
            if falsify(r, repaired, fresh, evaluator=evaluator).refuted:
                LOGGER.debug("%s repair rejected on the fresh sample", kind.value)
                continue
            new_verdict = check_inductive(r, repaired, options, fallback=fallback, evaluator=evaluator)
            if _RANK[new_verdict.status] >= _RANK[outcome.verdict.status]:
                outcome.candidate = repaired
                outcome.verdict = new_verdict
                outcome.plans.append(plan)
                accepted = True
                break
        if not accepted:
            LOGGER.warning("Repair round %d found no acceptable candidate", round_)
            break
    return outcome


def _strategies(profile: FailureProfile, side: int) -> list[RepairKind]:
    if profile.relative < SMALL_DEFECT:
        return [RepairKind.ADDITIVE, RepairKind.PRECOMPOSE, RepairKind.LOCAL]
    if profile.within(side) and len(profile.points) < LOCAL_REGION_CAP:
        return [RepairKind.LOCAL, RepairKind.ADDITIVE, RepairKind.PRECOMPOSE]
    return [RepairKind.PRECOMPOSE, RepairKind.ADDITIVE]


def _apply(
    kind: RepairKind,
    r: Recurrence,
    candidate: Candidate,
    profile: FailureProfile,
    points: Sequence[Point],
    evaluator: RecurrenceEvaluator,
) -> tuple[Candidate, RepairPlan]:
    if kind is RepairKind.LOCAL:
        local = repair_local(r, candidate, profile.points, evaluator=evaluator, sample=points)
        return local.candidate, local.plan
    if kind is RepairKind.ADDITIVE:
        return repair_additive(r, candidate, sample=points)
    return repair_precompose(r, candidate, sample=points, evaluator=evaluator)
