"""Tests for inductive bound checking, hybrid verification and ranking checks."""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path
import unittest

import numpy as np

from solver.models.candidate import Direction, single_piece
from solver.models.checker import (
    CheckOptions,
    ComparisonTask,
    Verdict,
    VerdictStatus,
    check_inductive,
    check_ranking,
    falsify,
    hybrid_verify,
    inductivity_measure,
    symbolic_compare,
)
from solver.models.dsl import parse_candidate, parse_expr, parse_guard, parse_recurrence_file
from solver.models.evaluator import RecurrenceEvaluator
from solver.models.expr import Call, Const, Var
from solver.models.regions import RegionNotEnumerableError
from solver.models.repair import fresh_points

TRIANGLE = "vars n\ncase n >= 1 : f(n - 1) + n\ncase n = 0 : 0\n"
COUNTER = "vars n\ncase n >= 1 : f(n - 1) + 1\ncase n = 0 : 0\n"
EXACT = "piece true : 1/2*n*n + 1/2*n\n"
# Off by a lot at n = 5 only: a valid upper bound that is not inductive at n = 6.
SPIKE = "piece n = 5 : 100\npiece true : 1/2*n*n + 1/2*n\n"
BENCHMARKS = Path(__file__).resolve().parents[1] / "benchmarks"
AUDIT_SIDES = {1: 300, 2: 60, 3: 15}


def triangle():
    return parse_recurrence_file(TRIANGLE).build()


def candidate(text: str, direction: Direction = Direction.UPPER):
    return parse_candidate(text, ("n",), direction)


class SymbolicCompareTests(unittest.TestCase):
    """Slack rewriting with nonnegative coefficients."""

    def test_polynomial_dominance(self) -> None:
        """``n^2 >= n`` holds for ``n >= 1`` but is not certified the other way round."""

        n = Var(0)
        region = parse_guard("n >= 1", ("n",))
        self.assertTrue(symbolic_compare(n * n, n, region, 1).is_proved)
        self.assertEqual(symbolic_compare(n, n * n, region, 1).status, VerdictStatus.UNKNOWN)

    def test_empty_regions_and_calls(self) -> None:
        """Empty regions prove trivially; calls are never compared."""

        n = Var(0)
        self.assertTrue(symbolic_compare(n, n + 1, parse_guard("n >= 3 and n <= 1", ("n",)), 1).is_proved)
        verdict = symbolic_compare(Call((n,)), n, parse_guard("true", ("n",)), 1)
        self.assertEqual(verdict.reason, "call node in comparison")


class CheckInductiveTests(unittest.TestCase):
    """Proofs and refutations of inductive bounds."""

    def test_exact_solution_is_proved_both_ways(self) -> None:
        """The exact solution is both a post- and a prefixpoint."""

        r = triangle()
        for direction in (Direction.UPPER, Direction.LOWER):
            verdict = check_inductive(r, candidate(EXACT, direction))
            self.assertTrue(verdict.is_proved, verdict.reason)
            self.assertEqual(verdict.method, "symbolic")

    def test_loose_upper_bound_is_proved(self) -> None:
        """``n^2 + 1`` is an inductive upper bound."""

        verdict = check_inductive(triangle(), candidate("piece true : n*n + 1\n"))
        self.assertTrue(verdict.is_proved)

    def test_too_small_candidate_is_refuted_with_a_witness(self) -> None:
        """A candidate below the solution is refuted at a recomputable point."""

        r = triangle()
        verdict = check_inductive(r, candidate("piece true : 1/2*n*n\n"))
        self.assertTrue(verdict.is_refuted)
        self.assertEqual(verdict.point, (1,))
        self.assertEqual(verdict.kind, "bound")
        self.assertEqual((verdict.lhs, verdict.rhs), (Fraction(1), Fraction(1, 2)))

    def test_finite_regions_are_exhausted(self) -> None:
        """Non-inductive points inside an enumerable region are found exactly."""

        verdict = check_inductive(triangle(), candidate(SPIKE))
        self.assertTrue(verdict.is_refuted)
        self.assertEqual(verdict.method, "exhaustive")
        self.assertEqual(verdict.point, (6,))
        self.assertEqual(verdict.lhs, 106)

    def test_disabled_exact_tiers_fall_back_to_sampling(self) -> None:
        """Without the exact tiers a correct candidate stays Unknown."""

        verdict = check_inductive(triangle(), candidate(EXACT), CheckOptions(symbolic=False))
        self.assertEqual(verdict.status, VerdictStatus.UNKNOWN)
        self.assertEqual(verdict.method, "sampling")
        self.assertGreater(verdict.points_checked, 0)

    def test_fallback_is_consulted_for_open_regions(self) -> None:
        """An external prover can close regions the symbolic tier leaves open."""

        r = parse_recurrence_file("vars n\ncase n >= 1 : f(n - 1) + log2floor(n)\ncase n = 0 : 0\n").build()
        tasks: list[ComparisonTask] = []

        def prover(task: ComparisonTask) -> Verdict:
            tasks.append(task)
            return Verdict.proved("cas")

        bound = candidate("piece true : n*n\n")
        verdict = check_inductive(r, bound, CheckOptions(finite_region_cap=16), fallback=prover)
        self.assertTrue(verdict.is_proved, verdict.reason)
        for task in tasks:
            self.assertEqual(task.direction, Direction.UPPER)
            self.assertEqual(task.nvars, 1)

    def test_points_without_a_piece_are_never_proved(self) -> None:
        """A candidate that skips part of the domain is refuted where it falls below."""

        r = parse_recurrence_file(COUNTER).build()
        verdict = check_inductive(r, candidate("piece n = 0 : 0\npiece n >= 5 : n - 100\n"))
        self.assertTrue(verdict.is_refuted)
        self.assertEqual(verdict.kind, "bound")
        self.assertEqual(verdict.point, (5,))
        self.assertEqual((verdict.lhs, verdict.rhs), (Fraction(5), Fraction(-95)))

    def test_call_targets_without_a_piece_stay_unknown(self) -> None:
        """Calls landing outside every piece leave the check open."""

        r = parse_recurrence_file(COUNTER).build()
        verdict = check_inductive(r, candidate("piece n >= 1 : n\n"))
        self.assertEqual(verdict.status, VerdictStatus.UNKNOWN)
        self.assertIn("call target covered by no candidate piece from (1,)", verdict.reason)

    def test_split_pieces_that_cover_the_domain_prove(self) -> None:
        """Pieces meeting along a two-variable boundary still cover everything."""

        r = parse_recurrence_file(
            "vars n m\ncase n >= 1 : f(n - 1, m) + 1\ncase n = 0 : 0\n"
        ).build()
        bound = parse_candidate("piece n >= m : n + 1\npiece n < m : n + 1\n", ("n", "m"), Direction.UPPER)
        verdict = check_inductive(r, bound)
        self.assertTrue(verdict.is_proved, verdict.reason)

    def test_measures_and_falsification(self) -> None:
        """Exact measures and the sampled falsifier agree on violations."""

        r = triangle()
        self.assertEqual(inductivity_measure(r, candidate(EXACT), [(0,), (4,)]), [0, 0])
        report = falsify(r, candidate(SPIKE), [(n,) for n in range(10)], dominance=False)
        self.assertTrue(report.refuted)
        self.assertEqual(report.violation.point, (6,))  # type: ignore[union-attr]
        clean = falsify(r, candidate(EXACT), [(n,) for n in range(10)])
        self.assertFalse(clean.refuted)
        self.assertEqual(clean.checked, 10)


class HybridTests(unittest.TestCase):
    """Exhaustive dominance on a finite region composed with inductivity elsewhere."""

    def test_hybrid_proves_what_induction_alone_cannot(self) -> None:
        """The spike is checked by value below 10 and inductively above."""

        r = triangle()
        bound = candidate(SPIKE)
        d1 = parse_guard("n <= 9", ("n",))
        d2 = parse_guard("n >= 10", ("n",))
        verdict = hybrid_verify(r, bound, d1, d2)
        self.assertTrue(verdict.is_proved, verdict.reason)
        self.assertEqual(verdict.method, "hybrid")

    def test_hybrid_refutes_dominance_failures(self) -> None:
        """Values below the least solution on the finite part are refuted."""

        verdict = hybrid_verify(
            triangle(), candidate("piece true : n\n"), parse_guard("n <= 9", ("n",)), parse_guard("n >= 10", ("n",))
        )
        self.assertTrue(verdict.is_refuted)
        self.assertEqual(verdict.kind, "bound")
        self.assertEqual(verdict.point, (2,))

    def test_hybrid_needs_a_piece_on_every_finite_point(self) -> None:
        """A first region point without a candidate piece leaves the result open."""

        bound = candidate("piece n >= 3 : 1/2*n*n + 1/2*n\n")
        verdict = hybrid_verify(triangle(), bound, parse_guard("n <= 9", ("n",)), parse_guard("n >= 10", ("n",)))
        self.assertEqual(verdict.status, VerdictStatus.UNKNOWN)
        self.assertIn("(0,)", verdict.reason)

    def test_hybrid_region_errors(self) -> None:
        """Uncovered points and infinite first regions are usage errors."""

        r = triangle()
        with self.assertRaises(ValueError):
            hybrid_verify(r, candidate(EXACT), parse_guard("n <= 9", ("n",)), parse_guard("n >= 11", ("n",)))
        with self.assertRaises(RegionNotEnumerableError):
            hybrid_verify(r, candidate(EXACT), parse_guard("n >= 9", ("n",)), parse_guard("n <= 8", ("n",)))


class RankingTests(unittest.TestCase):
    """Ranking and quasi-ranking functions."""

    def test_ranking_function(self) -> None:
        """``n`` decreases by one on every call."""

        self.assertTrue(check_ranking(triangle(), parse_expr("n", ("n",))).is_proved)

    def test_constant_is_only_a_quasi_ranking_function(self) -> None:
        """A constant never decreases, which quasi-ranking allows."""

        r = triangle()
        self.assertTrue(check_ranking(r, Const(5)).is_refuted)
        self.assertTrue(check_ranking(r, single_piece(Const(5), Direction.LOWER), quasi=True).is_proved)


class SoundnessAuditTests(unittest.TestCase):
    """Proved bounds hold at fresh points the checker never saw."""

    def test_proved_bounds_dominate_at_fresh_points(self) -> None:
        """Shifted reference solutions of every bundled equation, checked both ways and then sampled."""

        rng = np.random.default_rng(20240611)
        proved = 0
        for path in sorted(BENCHMARKS.glob("*.rec")):
            reference = path.with_suffix(".ref")
            if not reference.exists():
                continue
            document = parse_recurrence_file(path.read_text(encoding="utf-8"))
            r = document.build()
            evaluator = RecurrenceEvaluator(r)
            side = AUDIT_SIDES.get(r.arity, 8)
            shifts = [(Fraction(0), Fraction(0))] + [
                (Fraction(int(rng.integers(-8, 9)), 4), Fraction(int(rng.integers(-2, 3)), 4)) for _ in range(2)
            ]
            for direction in (Direction.UPPER, Direction.LOWER):
                base = parse_candidate(reference.read_text(encoding="utf-8"), document.variables, direction)
                for shift, slope in shifts:
                    bound = base.map_exprs(lambda e, s=shift, t=slope: e + Const(s) + Const(t) * Var(0))
                    verdict = check_inductive(r, bound)
                    if not verdict.is_proved:
                        continue
                    proved += 1
                    points = fresh_points(r, [], 200, side, seed=int(rng.integers(0, 2**31)))
                    for point in points:
                        status = evaluator.evaluate(point)
                        if not status.ok:
                            continue
                        with self.subTest(benchmark=path.stem, direction=direction.value, shift=shift, slope=slope, point=point):
                            self.assertGreaterEqual((bound.evaluate(point) - status.value) * direction.sign, 0)  # type: ignore[operator]
        self.assertGreater(proved, 0)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
