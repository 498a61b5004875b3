"""Rational reconstruction of fitted coefficients."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
import itertools
import logging
import math
from typing import Sequence

from solver.models.candidate import Candidate, Direction
from solver.models.evaluator import TrainingSet
from solver.models.expr import eval_expr
from solver.models.recurrence import Recurrence

LOGGER = logging.getLogger(__name__)

MAX_VARIANTS = 8


class RoundingKind(str, Enum):
    LDEN = "lden"
    NEAREST_LDEN = "nearest_lden"
    FIXED_DENOMINATOR = "fixed_denominator"


@dataclass(frozen=True, slots=True)
class RoundingStrategy:
    kind: RoundingKind = RoundingKind.LDEN
    max_denominator: int = 100_000

    def __post_init__(self) -> None:
        if self.max_denominator < 1:
            raise ValueError("max_denominator must be at least 1.")


def best_rational_bounds(x: float | Fraction, max_den: int) -> tuple[Fraction, Fraction]:
    """Closest rationals below and above ``x`` with denominator at most ``max_den``.

    Walks the Stern–Brocot tree, taking runs of same-direction steps at once.
    """

    if max_den < 1:
        raise ValueError("max_den must be at least 1.")
    target = Fraction(x)
    if target.denominator <= max_den:
        return target, target

    base = math.floor(target)
    lo_p, lo_q = base, 1
    hi_p, hi_q = base + 1, 1
    while True:
        mid_p, mid_q = lo_p + hi_p, lo_q + hi_q
        if mid_q > max_den:
            break
        if Fraction(mid_p, mid_q) < target:
            # largest k with (lo + k·hi) still below the target
            steps = (target * lo_q - lo_p) / (hi_p - target * hi_q)
            k = min(math.floor(steps), (max_den - lo_q) // hi_q)
            if Fraction(lo_p + k * hi_p, lo_q + k * hi_q) >= target:
                k -= 1
            if k < 1:
                break
            lo_p, lo_q = lo_p + k * hi_p, lo_q + k * hi_q
        else:
            steps = (hi_p - target * hi_q) / (target * lo_q - lo_p)
            k = min(math.floor(steps), (max_den - hi_q) // lo_q)
            if Fraction(hi_p + k * lo_p, hi_q + k * lo_q) <= target:
                k -= 1
            if k < 1:
                break
            hi_p, hi_q = hi_p + k * lo_p, hi_q + k * lo_q
    return Fraction(lo_p, lo_q), Fraction(hi_p, hi_q)


def round_nearest(x: float | Fraction, strategy: RoundingStrategy) -> Fraction:
    target = Fraction(x)
    if strategy.kind is RoundingKind.FIXED_DENOMINATOR:
        return Fraction(round(target * strategy.max_denominator), strategy.max_denominator)
    return target.limit_denominator(strategy.max_denominator)


def round_directed(x: float | Fraction, strategy: RoundingStrategy, up: bool) -> Fraction:
    target = Fraction(x)
    if strategy.kind is RoundingKind.FIXED_DENOMINATOR:
        scaled = target * strategy.max_denominator
        numerator = math.ceil(scaled) if up else math.floor(scaled)
        return Fraction(numerator, strategy.max_denominator)
    if strategy.kind is RoundingKind.NEAREST_LDEN:
        nearest = target.limit_denominator(strategy.max_denominator)
        if (nearest >= target) == up or nearest == target:
            return nearest
    lower, upper = best_rational_bounds(target, strategy.max_denominator)
    return upper if up else lower


def _feature_signs(candidate: Candidate, training: TrainingSet | None) -> list[int]:
    """``+1``/``-1`` for columns of constant sign on their sampled subdomain, ``0`` otherwise."""

    ms = candidate.model_space
    assert ms is not None
    signs: list[int] = []
    owners = [ms.recurrence.case_index(point) for point in training.points] if training else []
    for column in ms.columns:
        feature = ms.bank.features[column.feature].expr
        seen_positive = seen_negative = False
        if training is not None:
            for point, owner in zip(training.points, owners):
                if owner != column.case:
                    continue
                value = eval_expr(feature, point)
                if value is None:
                    continue
                seen_positive |= value > 0
                seen_negative |= value < 0
                if seen_positive and seen_negative:
                    break
        signs.append(1 if not seen_negative else (-1 if not seen_positive else 0))
    return signs


def _choices(value: float, sign: int, direction: Direction, strategy: RoundingStrategy) -> list[Fraction]:
    lower = round_directed(value, strategy, up=False)
    upper = round_directed(value, strategy, up=True)
    if lower == upper:
        return [lower]
    raise_value = (sign > 0) == (direction is Direction.UPPER)
    if sign == 0:
        return [upper, lower] if direction is Direction.UPPER else [lower, upper]
    return [upper] if raise_value else [lower]


def rationalize_candidate(
    candidate: Candidate,
    strategy: RoundingStrategy | None = None,
    policy: str = "safety-greedy",
    *,
    recurrence: Recurrence | None = None,
    training: TrainingSet | None = None,
    recheck_points: int = 2000,
    require_inductive: bool = True,
    seed: int = 0,
) -> list[Candidate]:
    """Rational variants of a fitted candidate that pass the sampled recheck, tightest first."""

    strategy = strategy or RoundingStrategy()
    if candidate.coefficients is None or candidate.model_space is None:
        raise ValueError("Only fitted candidates carry coefficients to round.")
    if policy not in ("safety-greedy", "nearest"):
        raise ValueError(f"Unknown rounding policy {policy!r}.")

    ms = candidate.model_space
    nearest = [round_nearest(value, strategy) for value in candidate.coefficients]
    vectors: list[tuple[Fraction, ...]] = []
    if policy == "safety-greedy":
        signs = _feature_signs(candidate, training)
        options = [
            _choices(value, sign, candidate.direction, strategy)
            for value, sign in zip(candidate.coefficients, signs)
        ]
        total = math.prod(len(option) for option in options)
        if total <= MAX_VARIANTS:
            vectors.extend(tuple(combo) for combo in itertools.product(*options))
        else:
            vectors.append(tuple(option[0] for option in options))
            vectors.append(tuple(option[-1] for option in options))
    vectors.append(tuple(nearest))

    unique: list[tuple[Fraction, ...]] = []
    for vector in vectors:
        if vector not in unique:
            unique.append(vector)

    variants = [ms.to_candidate(vector, candidate.direction, candidate.provenance) for vector in unique]
    if recurrence is None or training is None or not len(training):
        return variants

    subset = training if len(training) <= recheck_points else training.subsample(recheck_points / len(training), seed)
    scored: list[tuple[Fraction, int, Candidate]] = []
    for order, variant in enumerate(variants):
        gap = _sampled_gap(variant, recurrence, subset, require_inductive)
        if gap is not None:
            scored.append((gap, order, variant))
    scored.sort(key=lambda item: (item[0], item[1]))
    if not scored:
        LOGGER.warning("No rounded %s variant survived the sampled recheck", candidate.direction.value)
    return [variant for _, _, variant in scored]


def _sampled_gap(
    variant: Candidate, r: Recurrence, subset: TrainingSet, require_inductive: bool
) -> Fraction | None:
    """Total distance to the exact values, or ``None`` on a sampled violation."""

    sign = variant.direction.sign
    total = Fraction(0)
    for point, value in zip(subset.points, subset.values):
        gap = (variant.evaluate(point) - value) * sign
        if gap < 0:
            return None
        total += gap
        if require_inductive:
            measure = variant.measure(r, point)
            if measure is not None and variant.violates(measure):
                return None
    return total


def rationalize_values(values: Sequence[float], strategy: RoundingStrategy | None = None) -> list[Fraction]:
    """Nearest bounded-denominator rationals, coefficient by coefficient."""

    strategy = strategy or RoundingStrategy()
    return [round_nearest(value, strategy) for value in values]
