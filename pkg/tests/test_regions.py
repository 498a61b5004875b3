"""Tests for region enumeration, residue splits and slack parametrisations."""
from __future__ import annotations

import unittest

import sympy as sp

from solver.models.candidate import Direction
from solver.models.dsl import parse_candidate, parse_expr, parse_guard
from solver.models.expr import Var
from solver.models.regions import (
    ResidueClass,
    call_divisors,
    effective_pieces,
    enumerate_points,
    is_empty,
    is_empty_exact,
    prune,
    relaxation_feasible,
    residue_classes,
    sample_point,
    slack_parametrisations,
    uncovered,
)

VARS = ("n", "c")


class EnumerationTests(unittest.TestCase):
    """Finite regions and emptiness."""

    def test_enumerate_bounded_region(self) -> None:
        """Bounded regions list their integer points; unbounded ones give None."""

        guard = parse_guard("n <= 2 and c <= 1 and n + c >= 2", VARS)
        self.assertEqual(enumerate_points(guard, 2, 100), [(1, 1), (2, 0), (2, 1)])
        self.assertIsNone(enumerate_points(parse_guard("n >= 3", VARS), 2, 100))
        self.assertIsNone(enumerate_points(parse_guard("n <= 20 and c <= 20", VARS), 2, 100))
        self.assertEqual(enumerate_points(parse_guard("n >= 3 and n <= 1", VARS), 2, 100), [])

    def test_is_empty(self) -> None:
        """Contradictory bounds are detected by interval propagation."""

        self.assertTrue(is_empty(parse_guard("n <= 3 and n >= 4", VARS), 2))
        self.assertFalse(is_empty(parse_guard("n >= 4", VARS), 2))

    def test_relaxation_catches_what_intervals_miss(self) -> None:
        """Two-variable contradictions need the LP relaxation."""

        guard = parse_guard("n - c >= 1 and c - n >= 0", VARS)
        self.assertFalse(is_empty(guard, 2))
        self.assertFalse(relaxation_feasible(guard, 2))
        self.assertTrue(is_empty_exact(guard, 2))
        self.assertFalse(is_empty_exact(parse_guard("n >= c", VARS), 2))

    def test_uncovered_parts(self) -> None:
        """Subtracting guards leaves exactly the points no guard claims."""

        region = parse_guard("n >= 1", VARS)
        gaps = uncovered(region, [parse_guard("n = 0", VARS), parse_guard("n >= 5", VARS)], 2)
        assert gaps is not None
        self.assertTrue(gaps)
        self.assertEqual(sample_point(gaps[0], 2), (1, 0))
        halves = [parse_guard("n >= c", VARS), parse_guard("n < c", VARS)]
        self.assertEqual(uncovered(parse_guard("true", VARS), halves, 2), [])
        self.assertEqual(uncovered(region, [parse_guard("true", VARS)], 2), [])
        self.assertIsNone(sample_point(parse_guard("n >= 100", VARS), 2, reach=64))


class ResidueTests(unittest.TestCase):
    """Residue classes for floor and ceiling arguments."""

    def test_call_divisors(self) -> None:
        """Only divisions inside call arguments count."""

        body = parse_expr("f(floordiv(n, 2), c) + floordiv(c, 3)", VARS)
        self.assertEqual(call_divisors(body), ({2}, {0}))

    def test_residue_classes(self) -> None:
        """Split variables range over every residue of the modulus."""

        classes = residue_classes(2, {2, 3}, {0}, 30)
        assert classes is not None
        self.assertEqual(len(classes), 6)
        self.assertEqual(classes[1].residues, (1, None))
        self.assertIsNone(residue_classes(2, {7, 11}, {0}, 30))
        self.assertEqual(residue_classes(2, set(), set(), 30), [ResidueClass.identity(2)])

    def test_bindings_and_points(self) -> None:
        """Bindings and ``to_point`` describe the same substitution."""

        cls = ResidueClass(3, (2, None))
        self.assertEqual(cls.to_point((4, 5)), (14, 5))
        self.assertEqual(cls.describe(), "x1≡2 mod 3")
        bound = cls.bindings()
        self.assertEqual(bound[1], Var(1))
        self.assertTrue(ResidueClass.identity(2).is_identity)


class PieceRegionTests(unittest.TestCase):
    """Candidate pieces as disjoint regions."""

    def test_effective_pieces_follow_evaluation_order(self) -> None:
        """Later pieces lose the points claimed by earlier ones."""

        candidate = parse_candidate("piece n = 5 : 100\npiece true : n\n", VARS, Direction.UPPER)
        regions = prune(effective_pieces(candidate), 2)
        for n in range(10):
            owners = [piece for guard, piece in regions if guard.holds((n, 0))]
            self.assertEqual(len(owners), 1)
            self.assertIs(owners[0], candidate.piece_for((n, 0)))


class SlackParametrisationTests(unittest.TestCase):
    """Variables rewritten through nonnegative slacks."""

    def test_lower_bound_anchor(self) -> None:
        """``n >= 3`` becomes ``n = 3 + m``."""

        params = slack_parametrisations(parse_guard("n >= 3", ("n",)), 1)
        self.assertTrue(params)
        self.assertFalse(any(param.empty for param in params))
        self.assertTrue(
            any(sp.simplify(param.values[0] - (3 + param.slacks[0])) == 0 for param in params)
        )

    def test_equalities_are_solved(self) -> None:
        """An equality fixes one variable in terms of the others."""

        params = slack_parametrisations(parse_guard("n = c + 2", VARS), 2)
        first = params[0]
        self.assertEqual(len(first.slacks), 1)
        self.assertEqual(sp.simplify(first.values[0] - first.values[1] - 2), 0)

    def test_inconsistent_regions_are_flagged(self) -> None:
        """Contradictions produce a single empty parametrisation."""

        params = slack_parametrisations(parse_guard("n = 1 and n = 2", ("n",)), 1)
        self.assertEqual(len(params), 1)
        self.assertTrue(params[0].empty)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
