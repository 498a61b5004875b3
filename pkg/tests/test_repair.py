"""Tests for local, additive and precomposition repairs and the repair loop."""
from __future__ import annotations

from fractions import Fraction
import unittest

from solver.models.candidate import Direction, Provenance
from solver.models.checker import check_inductive, hybrid_verify
from solver.models.dsl import parse_candidate, parse_guard, parse_recurrence_file
from solver.models.evaluator import RecurrenceEvaluator
from solver.models.expr import Const, Var
from solver.models.recurrence import NotAffineError
from solver.models.regions import RegionNotEnumerableError
from solver.models.repair import (
    RepairError,
    RepairKind,
    default_maps,
    default_rays,
    failure_profile,
    fresh_points,
    minimal_scale,
    repair_additive,
    repair_local,
    repair_loop,
    repair_precompose,
)

TRIANGLE = "vars n\ncase n >= 1 : f(n - 1) + n\ncase n = 0 : 0\n"
DIVIDE_AND_CONQUER = "vars n\ncase n = 0 : 1\ncase n >= 1 : 2*f(floordiv(n, 3)) + 5*f(floordiv(n, 6)) + n\n"
RUNNING_EXAMPLE = """\
vars n c
case n >= 1 and c >= 100 : f(n - 1, 0) + n + 300
case n >= 1 and c <= 99 : f(n - 1, c + 1) + n
case n = 0 : c
"""
# Linear fit of the running example, short of inductive by 1/100 and 2/100 on its recursive pieces.
NEAR_MISS = """\
piece n >= 1 and c >= 100 : 1/2*n*n + 347/100*n + 14851/50
piece n >= 1 and c <= 99 : 1/2*n*n + 347/100*n + 297/100*c
piece n = 0 : c
"""
BRANCHING = "vars n\ncase n >= 2 : max(f(n - 1), f(n - 2)) + 1\ncase n <= 1 : 1\n"
SAMPLE = [(n,) for n in range(40)]


def triangle():
    return parse_recurrence_file(TRIANGLE).build()


def upper(text: str):
    return parse_candidate(text, ("n",), Direction.UPPER)


class LocalRepairTests(unittest.TestCase):
    """Exact tables on finite regions."""

    def test_table_covers_the_bounding_box(self) -> None:
        """Failing points are patched through their bounding box."""

        r = triangle()
        local = repair_local(r, upper("piece true : n*n\n"), [(0,), (3,)])
        self.assertEqual(local.candidate.provenance, Provenance.REPAIR)
        self.assertEqual([local.candidate.evaluate((n,)) for n in range(4)], [0, 1, 3, 6])
        self.assertEqual(local.candidate.evaluate((5,)), 25)
        self.assertEqual(local.interface, frozenset({(4,)}))
        self.assertTrue(local.d1.holds((2,)))
        self.assertTrue(any(guard.holds((9,)) for guard in local.d2))

    def test_patched_lower_bound_passes_the_hybrid_check(self) -> None:
        """A table below 25 fixes the base case; the interface is every point calling into it."""

        r = parse_recurrence_file(DIVIDE_AND_CONQUER).build()
        bound = parse_candidate("piece true : n + 10\n", ("n",), Direction.LOWER)
        refuted = check_inductive(r, bound)
        self.assertTrue(refuted.is_refuted)
        self.assertEqual(refuted.point, (0,))

        local = repair_local(r, bound, parse_guard("n <= 24", ("n",)))
        self.assertEqual(local.interface, frozenset((n,) for n in range(25, 150)))
        self.assertEqual(local.candidate.evaluate((1,)), 8)
        verdict = hybrid_verify(r, local.candidate, local.d1, local.d2)
        self.assertTrue(verdict.is_proved, verdict.reason)
        self.assertEqual(verdict.method, "hybrid")

    def test_slack_and_empty_requests(self) -> None:
        """Slack moves table values outward; no failing points leaves the candidate alone."""

        r = triangle()
        candidate = upper("piece true : n*n\n")
        local = repair_local(r, candidate, [(2,)], slack=Fraction(1, 2))
        self.assertEqual(local.candidate.evaluate((2,)), Fraction(7, 2))
        self.assertIs(repair_local(r, candidate, []).candidate, candidate)

    def test_unbounded_regions_are_rejected(self) -> None:
        """Only enumerable regions can be tabulated."""

        r = triangle()
        region = parse_guard("n >= 3", ("n",))
        with self.assertRaises(RegionNotEnumerableError):
            repair_local(r, upper("piece true : n*n\n"), region)


class AdditiveRepairTests(unittest.TestCase):
    """Scaled quasi-ranking rays."""

    def test_default_rays(self) -> None:
        """Linear-recursive equations get coordinate and constant rays only."""

        self.assertEqual(default_rays(triangle()), [Var(0), Const(1)])

    def test_minimal_scale(self) -> None:
        """Half of ``n`` closes the gap of ``n^2/2``; a constant ray never does."""

        r = triangle()
        candidate = upper("piece true : 1/2*n*n\n")
        self.assertEqual(minimal_scale(r, candidate, Var(0), SAMPLE), Fraction(1, 2))
        self.assertIsNone(minimal_scale(r, candidate, Const(1), SAMPLE))
        self.assertEqual(minimal_scale(r, upper("piece true : n*n\n"), Var(0), SAMPLE), 0)

    def test_repair_recovers_the_exact_solution(self) -> None:
        """Adding ``n/2`` on the recursive case yields ``n(n+1)/2``."""

        repaired, plan = repair_additive(triangle(), upper("piece true : 1/2*n*n\n"), sample=SAMPLE)
        self.assertEqual(plan.kind, RepairKind.ADDITIVE)
        self.assertEqual(plan.ray, Var(0))
        self.assertEqual(plan.scale, Fraction(1, 2))
        for n in (0, 1, 7, 120):
            self.assertEqual(repaired.evaluate((n,)), Fraction(n * (n + 1), 2))

    def test_non_affine_equations_are_rejected(self) -> None:
        """Additive repair needs a linearisation."""

        r = parse_recurrence_file(BRANCHING).build()
        with self.assertRaises(NotAffineError):
            repair_additive(r, upper("piece true : n + 1\n"))

    def test_no_usable_ray(self) -> None:
        """A constant ray cannot fix a growing defect."""

        with self.assertRaises(RepairError):
            repair_additive(triangle(), upper("piece true : 1/2*n*n\n"), [Const(1)], sample=SAMPLE)


class PrecomposeTests(unittest.TestCase):
    """Shifted and rescaled arguments."""

    def test_default_maps(self) -> None:
        """Shifts come per variable when there is more than one."""

        self.assertEqual(len(default_maps(1)), 8)
        self.assertEqual(len(default_maps(2)), 16)
        self.assertEqual(default_maps(1)[0][0], "x+1")

    def test_tightest_passing_map(self) -> None:
        """``(n + 1)^2 / 2`` is the closest shifted bound."""

        repaired, plan = repair_precompose(triangle(), upper("piece true : 1/2*n*n\n"), sample=SAMPLE)
        self.assertEqual(plan.label, "x+1")
        self.assertEqual(repaired.evaluate((3,)), 8)

    def test_sound_candidates_are_kept(self) -> None:
        """Nothing is composed onto a candidate that already passes."""

        candidate = upper("piece true : n*n + 1\n")
        repaired, plan = repair_precompose(triangle(), candidate, sample=SAMPLE)
        self.assertIs(repaired, candidate)
        self.assertIsNone(plan.mapping)


class RepairLoopTests(unittest.TestCase):
    """Check, repair and re-check."""

    def test_failure_profile(self) -> None:
        """Violations are collected with the largest one relative to the solution."""

        r = triangle()
        profile = failure_profile(r, upper("piece true : 1/2*n*n\n"), SAMPLE[:10], RecurrenceEvaluator(r))
        self.assertEqual(profile.points, tuple((n,) for n in range(1, 10)))
        self.assertEqual(profile.max_violation, Fraction(9, 2))
        self.assertEqual(profile.relative, Fraction(1, 10))
        self.assertTrue(profile.within(9))
        self.assertFalse(profile.within(8))

    def test_fresh_points(self) -> None:
        """Fresh points avoid the sample and repeat under the same seed."""

        r = triangle()
        first = fresh_points(r, SAMPLE, 10, 100, seed=4)
        self.assertEqual(first, fresh_points(r, SAMPLE, 10, 100, seed=4))
        self.assertEqual(len(first), 10)
        self.assertFalse(set(first) & set(SAMPLE))
        self.assertTrue(all(0 <= point[0] <= 100 for point in first))

    def test_loop_repairs_a_refuted_candidate(self) -> None:
        """Tables fail the fresh sample, the additive ray succeeds."""

        outcome = repair_loop(triangle(), upper("piece true : 1/2*n*n\n"), sample=SAMPLE)
        self.assertEqual(outcome.rounds, 1)
        self.assertEqual([plan.kind for plan in outcome.plans], [RepairKind.ADDITIVE])
        self.assertFalse(outcome.verdict.is_refuted)
        self.assertEqual(outcome.candidate.evaluate((50,)), 1275)

    def test_loop_closes_a_near_miss_with_a_small_ray(self) -> None:
        """The linear fit of the running example proves after adding ``n/50``."""

        r = parse_recurrence_file(RUNNING_EXAMPLE).build()
        candidate = parse_candidate(NEAR_MISS, ("n", "c"), Direction.UPPER)
        self.assertEqual(candidate.measure(r, (1, 100)), Fraction(1, 100))
        self.assertEqual(candidate.measure(r, (5, 99)), Fraction(2, 100))
        self.assertFalse(check_inductive(r, candidate).is_proved)

        outcome = repair_loop(r, candidate, budget=3, sample=[(n, c) for n in range(12) for c in range(121)])
        self.assertTrue(outcome.verdict.is_proved, outcome.verdict.reason)
        self.assertLessEqual(outcome.rounds, 3)
        self.assertEqual(outcome.plans[0].kind, RepairKind.ADDITIVE)
        self.assertEqual(outcome.plans[0].ray, Var(0))
        self.assertEqual(outcome.plans[0].scale, Fraction(1, 50))
        self.assertEqual(outcome.candidate.evaluate((5, 10)), candidate.evaluate((5, 10)) + Fraction(1, 10))
        self.assertEqual(outcome.candidate.evaluate((0, 7)), 7)

    def test_loop_leaves_proved_candidates_alone(self) -> None:
        """A proved candidate spends no budget."""

        candidate = upper("piece true : 1/2*n*n + 1/2*n\n")
        outcome = repair_loop(triangle(), candidate, sample=SAMPLE)
        self.assertTrue(outcome.verdict.is_proved)
        self.assertEqual(outcome.rounds, 0)
        self.assertIs(outcome.candidate, candidate)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
