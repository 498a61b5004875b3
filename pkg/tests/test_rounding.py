"""Tests for rational reconstruction of fitted coefficients."""
from __future__ import annotations

from fractions import Fraction
import math
import random
import unittest

from solver.models.candidate import Direction, single_piece
from solver.models.dsl import parse_recurrence_file
from solver.models.evaluator import SampleParams, generate_sample
from solver.models.expr import Var
from solver.models.modelspace import build_model_space, default_bank
from solver.models.rounding import (
    RoundingKind,
    RoundingStrategy,
    best_rational_bounds,
    rationalize_candidate,
    rationalize_values,
    round_directed,
)

TRIANGLE = "vars n\ncase n >= 1 : f(n - 1) + n\ncase n = 0 : 0\n"


class RationalBoundsTests(unittest.TestCase):
    """Closest bounded-denominator rationals around a real."""

    def test_pi(self) -> None:
        """The classic approximations bracket pi."""

        self.assertEqual(best_rational_bounds(math.pi, 10), (Fraction(25, 8), Fraction(22, 7)))

    def test_exact_inputs_are_kept(self) -> None:
        """A representable value is its own bound on both sides."""

        self.assertEqual(best_rational_bounds(Fraction(1, 3), 10), (Fraction(1, 3), Fraction(1, 3)))
        self.assertEqual(best_rational_bounds(-2.0, 1), (Fraction(-2), Fraction(-2)))
        with self.assertRaises(ValueError):
            best_rational_bounds(0.5, 0)

    def test_bounds_are_tight(self) -> None:
        """No admissible fraction lies strictly between the bounds and the target."""

        rng = random.Random(3)
        for _ in range(40):
            x = rng.uniform(-5, 5)
            max_den = rng.randint(1, 30)
            lower, upper = best_rational_bounds(x, max_den)
            self.assertLessEqual(lower, Fraction(x))
            self.assertGreaterEqual(upper, Fraction(x))
            self.assertLessEqual(lower.denominator, max_den)
            self.assertLessEqual(upper.denominator, max_den)
            for q in range(1, max_den + 1):
                for p in range(math.floor(lower * q), math.ceil(upper * q) + 1):
                    between = Fraction(p, q)
                    self.assertFalse(lower < between < Fraction(x), (x, max_den, between))
                    self.assertFalse(Fraction(x) < between < upper, (x, max_den, between))

    def test_agrees_with_exhaustive_search(self) -> None:
        """A thousand seeded targets match the best floor and ceiling over every denominator."""

        rng = random.Random(20240611)
        for case in range(1000):
            if case % 4 == 0:
                target = Fraction(rng.randint(-50_000, 50_000), rng.randint(1, 1000))
            else:
                target = Fraction(rng.uniform(-50, 50))
            max_den = rng.randint(1, 500)
            lower = max(Fraction(target.numerator * q // target.denominator, q) for q in range(1, max_den + 1))
            upper = min(Fraction(-(-target.numerator * q // target.denominator), q) for q in range(1, max_den + 1))
            with self.subTest(target=target, max_den=max_den):
                self.assertEqual(best_rational_bounds(target, max_den), (lower, upper))

    def test_directed_rounding_strategies(self) -> None:
        """Fixed denominators round on the grid; nearest rounding keeps the side when it can."""

        fixed = RoundingStrategy(RoundingKind.FIXED_DENOMINATOR, 100)
        self.assertEqual(round_directed(0.123, fixed, up=True), Fraction(13, 100))
        self.assertEqual(round_directed(0.123, fixed, up=False), Fraction(12, 100))
        nearest = RoundingStrategy(RoundingKind.NEAREST_LDEN, 10)
        self.assertEqual(round_directed(math.pi, nearest, up=True), Fraction(22, 7))
        self.assertEqual(round_directed(math.pi, nearest, up=False), Fraction(25, 8))
        self.assertEqual(rationalize_values([0.5, 1 / 3], RoundingStrategy(max_denominator=10)), [Fraction(1, 2), Fraction(1, 3)])
        with self.assertRaises(ValueError):
            RoundingStrategy(max_denominator=0)


class RationalizeCandidateTests(unittest.TestCase):
    """Rounded variants of fitted candidates."""

    def setUp(self) -> None:
        self.recurrence = parse_recurrence_file(TRIANGLE).build()
        self.training = generate_sample(self.recurrence, SampleParams(nb=20, nrs=0))
        self.space = build_model_space(self.recurrence, default_bank(1))

    def test_exact_rounding_ranks_first(self) -> None:
        """The variant closest to the sampled values comes first."""

        fitted = self.space.to_candidate([1e-9, 0.5000000001, 0.49999999], Direction.UPPER)
        variants = rationalize_candidate(
            fitted,
            RoundingStrategy(max_denominator=1000),
            recurrence=self.recurrence,
            training=self.training,
        )
        self.assertEqual(len(variants), 2)
        self.assertEqual(variants[0].evaluate((7,)), 28)
        self.assertGreater(variants[1].evaluate((7,)), 28)

    def test_unsafe_variants_are_dropped(self) -> None:
        """Variants violating a sampled value do not survive."""

        fitted = self.space.to_candidate([0.0, 0.4, 0.4], Direction.UPPER)
        variants = rationalize_candidate(
            fitted,
            RoundingStrategy(max_denominator=10),
            recurrence=self.recurrence,
            training=self.training,
        )
        self.assertEqual(variants, [])

    def test_without_a_sample_every_vector_is_returned(self) -> None:
        """No recheck happens without a training set."""

        fitted = self.space.to_candidate([0.0, 0.4, 0.4], Direction.UPPER)
        self.assertEqual(len(rationalize_candidate(fitted, RoundingStrategy(max_denominator=10))), 2)

    def test_invalid_inputs(self) -> None:
        """Only fitted candidates and known policies are accepted."""

        with self.assertRaises(ValueError):
            rationalize_candidate(single_piece(Var(0), Direction.UPPER))
        fitted = self.space.to_candidate([0.0, 0.5, 0.5], Direction.UPPER)
        with self.assertRaises(ValueError):
            rationalize_candidate(fitted, policy="ceil")


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
