"""Tests for exact evaluation of least solutions and training-set generation."""
from __future__ import annotations

from fractions import Fraction
import io
from pathlib import Path
import unittest

import numpy as np

from solver.models.dsl import parse_recurrence_file
from solver.models.evaluator import (
    EvalOutcome,
    RecurrenceEvaluator,
    SampleParams,
    TrainingSet,
    check_termination_on_sample,
    evaluate,
    generate_sample,
    kleene_reference,
    sample_points,
)

RUNNING_EXAMPLE = """\
vars n c
case n >= 1 and c >= 100 : f(n - 1, 0) + n + 300
case n >= 1 and c <= 99 : f(n - 1, c + 1) + n
case n = 0 : c
"""


BENCHMARKS = Path(__file__).resolve().parents[1] / "benchmarks"
ORACLE_SIDES = {1: 40, 2: 12, 3: 5}
SEED = 20240611


def recurrence(text: str):
    return parse_recurrence_file(text).build()


def _iterate_until_defined(r, point: tuple[int, ...]) -> Fraction | None:
    iterations = sum(point) + 2
    while iterations <= 4096:
        value = kleene_reference(r, point, iterations)
        if value is not None:
            return value
        iterations *= 2
    return None


class EvaluationTests(unittest.TestCase):
    """Outcomes of evaluating the least solution at a point."""

    def test_running_example_values(self) -> None:
        """Values follow the call chain exactly."""

        r = recurrence(RUNNING_EXAMPLE)
        self.assertEqual(evaluate(r, (3, 98)).value, 306)
        self.assertEqual(evaluate(r, (0, 42)).value, 42)
        evaluator = RecurrenceEvaluator(r)
        self.assertEqual(evaluator.value((1, 0)), 2)
        self.assertEqual(evaluator.value((200, 0)), evaluate(r, (200, 0)).value)

    def test_deep_chains_do_not_exhaust_the_stack(self) -> None:
        """Long call chains are handled by the explicit work stack."""

        r = recurrence("vars n\ncase n >= 1 : f(n - 1) + 1\ncase n = 0 : 0\n")
        self.assertEqual(evaluate(r, (50_000,)).value, 50_000)

    def test_cycle(self) -> None:
        """A call that revisits a pending point is a cycle."""

        status = evaluate(recurrence("vars n\ncase true : f(n)\n"), (3,))
        self.assertEqual(status.outcome, EvalOutcome.CYCLE)
        self.assertEqual(status.chain, ((3,), (3,)))
        self.assertFalse(status.ok)

    def test_divergence_budget(self) -> None:
        """Unbounded chains stop at the expansion budget."""

        status = evaluate(recurrence("vars n\ncase true : f(n + 1)\n"), (0,), max_expansions=50)
        self.assertEqual(status.outcome, EvalOutcome.DIVERGED)

    def test_exhausted_budgets_are_retried_with_larger_ones(self) -> None:
        """Running out of budget is not remembered as divergence for a larger budget."""

        r = recurrence("vars n\ncase n >= 1 : f(n - 1) + n\ncase n = 0 : 0\n")
        evaluator = RecurrenceEvaluator(r, max_expansions=10)
        self.assertEqual(evaluator.evaluate((50,)).outcome, EvalOutcome.DIVERGED)
        self.assertEqual(evaluator.evaluate((45,)).outcome, EvalOutcome.DIVERGED)
        evaluator.max_expansions = 100
        self.assertEqual(evaluator.value((50,)), 1275)
        self.assertEqual(evaluator.value((45,)), 1035)

    def test_calls_leaving_the_domain_are_undefined(self) -> None:
        """Calls outside the domain leave the value undefined along the whole chain."""

        r = recurrence("vars n\ncase n >= 1 : f(n - 2) + 1\ncase n = 0 : 0\n")
        evaluator = RecurrenceEvaluator(r)
        self.assertEqual(evaluator.evaluate((3,)).outcome, EvalOutcome.UNDEFINED)
        self.assertIsNone(evaluator.value((1,)))
        self.assertEqual(evaluator.value((4,)), 2)
        self.assertEqual(evaluator.evaluate((-1,)).outcome, EvalOutcome.UNDEFINED)

    def test_value_size_cap(self) -> None:
        """Values beyond the bit cap overflow."""

        r = recurrence("vars n\ncase n >= 1 : 2*f(n - 1)\ncase n = 0 : 1\n")
        status = evaluate(r, (40,), value_bits_cap=32)
        self.assertEqual(status.outcome, EvalOutcome.OVERFLOW)
        self.assertEqual(evaluate(r, (30,), value_bits_cap=32).value, 2**30)

    def test_kleene_iteration_agrees(self) -> None:
        """Enough fixpoint iterations reach the memoised value; too few stay undefined."""

        r = recurrence(RUNNING_EXAMPLE)
        self.assertEqual(kleene_reference(r, (3, 98), 10), 306)
        self.assertIsNone(kleene_reference(r, (3, 98), 2))

    def test_memoised_values_match_fixpoint_iteration_on_every_benchmark(self) -> None:
        """Five hundred seeded points per bundled equation agree with plain fixpoint iteration."""

        for path in sorted(BENCHMARKS.glob("*.rec")):
            r = recurrence(path.read_text(encoding="utf-8"))
            rng = np.random.default_rng(SEED)
            side = ORACLE_SIDES.get(r.arity, 4)
            evaluator = RecurrenceEvaluator(r)
            compared: dict[tuple[int, ...], Fraction | None] = {}
            for row in rng.integers(0, side + 1, size=(500, r.arity)):
                point = tuple(int(x) for x in row)
                if point in compared:
                    continue
                status = evaluator.evaluate(point)
                with self.subTest(benchmark=path.stem, point=point):
                    if status.ok:
                        compared[point] = _iterate_until_defined(r, point)
                        self.assertEqual(compared[point], status.value)
                    elif status.outcome is EvalOutcome.UNDEFINED:
                        compared[point] = kleene_reference(r, point, 64)
                        self.assertIsNone(compared[point])
            self.assertTrue(any(value is not None for value in compared.values()), path.stem)

    def test_termination_report(self) -> None:
        """Sample points are split into terminating and failing ones."""

        r = recurrence("vars n\ncase n >= 1 : f(n - 2) + 1\ncase n = 0 : 0\n")
        report = check_termination_on_sample(r, [(n,) for n in range(6)])
        self.assertEqual(report.checked, 6)
        self.assertEqual(report.terminating, [(0,), (2,), (4,)])
        self.assertFalse(report.all_terminate)


class SamplingTests(unittest.TestCase):
    """Sample points and training sets."""

    def test_hypercube_side_and_domain_filter(self) -> None:
        """The hypercube side follows ``nb`` and points outside the domain are dropped."""

        self.assertEqual(SampleParams(nb=100).hypercube_side(2), 9)
        self.assertEqual(SampleParams(nb=100, bb=4).hypercube_side(2), 4)
        r = recurrence("vars x y\ndomain y >= 1\ncase x < y : 0\ncase x >= y : f(x - y, y) + 1\n")
        points = sample_points(r, SampleParams(nb=100, nrs=0))
        self.assertEqual(len(points), 90)
        self.assertTrue(all(y >= 1 for _, y in points))

    def test_random_points_are_seeded(self) -> None:
        """The same seed gives the same sample."""

        r = recurrence(RUNNING_EXAMPLE)
        params = SampleParams(nb=25, brs=300, nrs=50, seed=11)
        self.assertEqual(sample_points(r, params), sample_points(r, params))
        self.assertGreater(len(sample_points(r, params)), 25)

    def test_generate_sample_excludes_failures(self) -> None:
        """Failing points are recorded apart from the training values."""

        r = recurrence("vars n\ncase n >= 1 : f(n - 2) + 1\ncase n = 0 : 0\n")
        training = generate_sample(r, SampleParams(nb=10, nrs=0))
        self.assertEqual(training.points, [(0,), (2,), (4,), (6,), (8,)])
        self.assertEqual(training.values, [0, 1, 2, 3, 4])
        self.assertEqual(sorted(training.failures), [(1,), (3,), (5,), (7,), (9,)])
        self.assertFalse(training.retried)

    def test_overflow_retries_with_small_inputs(self) -> None:
        """Overflowing samples are redrawn inside the retry bound."""

        r = recurrence("vars n\ncase n >= 1 : 2*f(n - 1)\ncase n = 0 : 1\n")
        training = generate_sample(r, SampleParams(nb=100, nrs=0, value_bits_cap=32))
        self.assertTrue(training.retried)
        self.assertEqual(training.points, [(n,) for n in range(16)])
        self.assertEqual(training.values[-1], 2**15)

    def test_training_set_helpers(self) -> None:
        """Arrays, subsamples and CSV output."""

        params = SampleParams(nb=4, nrs=0)
        training = TrainingSet([(0, 1), (2, 3)], [Fraction(1, 2), Fraction(4)], params)
        self.assertEqual(training.as_array().shape, (2, 2))
        self.assertEqual(training.value_array().tolist(), [0.5, 4.0])
        self.assertEqual(training.lookup()[(2, 3)], 4)
        self.assertEqual(len(training.subsample(0.5, seed=1)), 1)
        stream = io.StringIO()
        training.write_csv(stream)
        self.assertEqual(stream.getvalue().splitlines(), ["x1,x2,value", "0,1,1/2", "2,3,4/1"])
        with self.assertRaises(ValueError):
            TrainingSet([(0, 1), (0, 1)], [Fraction(0), Fraction(0)], params)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
