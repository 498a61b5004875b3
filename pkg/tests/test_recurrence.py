"""Tests for recurrence construction, classification and call structure."""
from __future__ import annotations

from fractions import Fraction
import unittest

from solver.models.dsl import parse_recurrence_file
from solver.models.expr import Call, Const, Guard, LinearConstraint, Max, Var, eval_expr
from solver.models.recurrence import (
    ArityError,
    CaseRole,
    NotAffineError,
    RecurrenceError,
    base_case,
    bias,
    build,
    call_graph,
    classify,
    interface_points,
    linearise,
    plus,
    rec_call,
    scaled,
)

N = Var(0)

RUNNING_EXAMPLE = """\
vars n c
case n >= 1 and c >= 100 : f(n - 1, 0) + n + 300
case n >= 1 and c <= 99 : f(n - 1, c + 1) + n
case n = 0 : c
"""


def running_example():
    return parse_recurrence_file(RUNNING_EXAMPLE).build()


class ConstructionTests(unittest.TestCase):
    """Building recurrences programmatically."""

    def test_constructor_api(self) -> None:
        """Combinators assemble a valid recurrence."""

        r = build(
            [
                (Guard((LinearConstraint((1,), ">=", 1),)), plus(rec_call(N - 1), N)),
                (Guard((LinearConstraint((1,), "=", 0),)), base_case(Const(0))),
            ],
            ["n"],
        )
        self.assertEqual(r.arity, 1)
        self.assertEqual(r.apply((4,), lambda p: Fraction(p[0] * (p[0] + 1), 2)), 10)
        self.assertEqual(r.case_index((0,)), 1)
        self.assertIsNone(r.case_index((-1,)))

    def test_constructor_guards(self) -> None:
        """Nested calls, negative scalings and call-bearing bases are refused."""

        with self.assertRaises(RecurrenceError):
            rec_call(Call((N,)))
        with self.assertRaises(RecurrenceError):
            scaled(Const(-1), rec_call(N - 1))
        with self.assertRaises(RecurrenceError):
            base_case(rec_call(N - 1))
        self.assertEqual(scaled(Const(2), rec_call(N - 1)).left, Const(2))  # type: ignore[union-attr]

    def test_arity_is_checked(self) -> None:
        """Calls and guards must use the declared variables."""

        with self.assertRaises(ArityError):
            build([(Guard.true(), Call((N, N)))], ["n"])
        with self.assertRaises(RecurrenceError):
            build([], ["n"])


class ClassificationTests(unittest.TestCase):
    """Structural classes, linearisation and bias."""

    def test_running_example_is_linear_recursive(self) -> None:
        """Single unit-coefficient calls make an affine linear-recursive equation."""

        eq_class = classify(running_example())
        self.assertTrue(eq_class.affine)
        self.assertTrue(eq_class.linear_recursive)
        self.assertTrue(eq_class.monotone_by_construction)
        self.assertFalse(eq_class.nested)
        self.assertEqual(eq_class.roles, (CaseRole.RECURSIVE, CaseRole.RECURSIVE, CaseRole.NON_RECURSIVE))

    def test_nested_and_max_equations(self) -> None:
        """Nested calls and extrema over calls are not affine."""

        nested = parse_recurrence_file("vars n\ncase n >= 1 : f(f(n - 1)) + 1\ncase n = 0 : 0\n").build()
        self.assertTrue(nested.nested)
        self.assertFalse(classify(nested).affine)
        with self.assertRaises(NotAffineError):
            linearise(nested)
        branching = parse_recurrence_file(
            "vars n\ncase n >= 2 : max(f(n - 1), f(n - 2)) + 1\ncase n <= 1 : 1\n"
        ).build()
        self.assertIsInstance(branching.cases[0].body.left, Max)  # type: ignore[union-attr]
        self.assertFalse(classify(branching).affine)
        self.assertFalse(classify(branching).linear_recursive)

    def test_linearise_and_bias(self) -> None:
        """The linear part maps zero to zero and the bias is the value at zero."""

        r = running_example()
        zero = lambda point: Fraction(0)  # noqa: E731
        linear = linearise(r)
        for point in ((5, 100), (5, 3), (0, 7)):
            self.assertEqual(linear.apply(point, zero), 0)
        offsets = bias(r)
        self.assertEqual(len(offsets), 3)
        self.assertEqual(eval_expr(offsets[0].body, (5, 100)), 305)
        self.assertEqual(eval_expr(offsets[2].body, (0, 7)), 7)


class CallStructureTests(unittest.TestCase):
    """Case-level call graphs and interface points."""

    def test_call_graph_components(self) -> None:
        """Base cases form their own component, listed before their callers."""

        r = running_example()
        sample = [(n, c) for n in range(4) for c in range(95, 105)]
        graph = call_graph(r, sample)
        self.assertEqual(graph.successors(0), {1, 2})
        self.assertEqual(graph.successors(1), {0, 1, 2})
        self.assertEqual(graph.successors(2), set())
        self.assertEqual(graph.components, ((2,), (0, 1)))
        self.assertIn((1, 0), graph.dependency_edges)

    def test_interface_points(self) -> None:
        """Only points whose calls land in the second region are reported."""

        r = running_example()
        d1 = Guard((LinearConstraint((0, 1), ">=", 100),))
        d2 = Guard((LinearConstraint((0, 1), "<=", 99),))
        found = interface_points(r, d1, d2, [(1, 100), (0, 100), (2, 50)])
        self.assertEqual(found, {(1, 100)})


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
