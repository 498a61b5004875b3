"""Tests for the solver service: solve, check, eval, quality and benchmarks."""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path
import tempfile
import unittest
from unittest.mock import patch

from backend.app.services import solver_service
from backend.app.services.cas_client import CASBridgeError
from backend.app.services.solver_service import (
    BENCH_COLUMNS,
    EXIT_PROVED,
    EXIT_REFUTED,
    EXIT_UNKNOWN,
    BenchRow,
    BenchTable,
    DirectionReport,
    QualitySymbol,
    SolveReport,
    classify_quality,
    cmd_bench,
    cmd_check,
    cmd_eval,
    cmd_solve,
    load_recurrence,
    run_benchmark,
)
from backend.config import SolverSettings
from solver.models.candidate import Direction
from solver.models.checker import Verdict, VerdictStatus
from solver.models.dsl import parse_candidate, parse_expr, parse_guard, parse_recurrence_file
from solver.models.evaluator import EvalOutcome

TRIANGLE = "vars n\ncase n >= 1 : f(n - 1) + n\ncase n = 0 : 0\n"
SMALL = SolverSettings(nb=60, brs=0, nrs=0, bank="poly2", recheck_points=100, max_expansions=2000, repair_budget=1)


def triangle_document():
    return parse_recurrence_file(TRIANGLE)


def candidate(text: str, direction: Direction):
    return parse_candidate(f"piece true : {text}\n", ("n",), direction)


class QualityTests(unittest.TestCase):
    """Symbols comparing bounds with a reference solution."""

    def setUp(self) -> None:
        self.reference = parse_expr("1/2*n*n + 1/2*n", ("n",))

    def test_exact_and_wrong(self) -> None:
        """Identical values are exact; a bound on the wrong side is wrong."""

        self.assertEqual(classify_quality(candidate("1/2*n*n + 1/2*n", Direction.UPPER), self.reference), QualitySymbol.EXACT)
        self.assertEqual(classify_quality(candidate("n", Direction.UPPER), self.reference), QualitySymbol.WRONG)
        self.assertEqual(classify_quality(None, self.reference), QualitySymbol.NONE)

    def test_near_exact_coefficients(self) -> None:
        """Coefficients within one percent are near exact."""

        bound = candidate("1/2*n*n + 101/200*n", Direction.UPPER)
        self.assertEqual(classify_quality(bound, self.reference), QualitySymbol.NEAR_EXACT)

    def test_asymptotic_classes(self) -> None:
        """Ratios along rays separate equivalence, same order and looser bounds."""

        self.assertEqual(
            classify_quality(candidate("1/2*n*n", Direction.LOWER), self.reference), QualitySymbol.EQUIVALENT
        )
        self.assertEqual(classify_quality(candidate("n*n + 1", Direction.UPPER), self.reference), QualitySymbol.THETA)
        self.assertEqual(classify_quality(candidate("n*n*n + 1", Direction.UPPER), self.reference), QualitySymbol.BIG_O)
        self.assertEqual(classify_quality(candidate("n", Direction.LOWER), self.reference), QualitySymbol.OMEGA)


class ReportTests(unittest.TestCase):
    """Exit codes of solve reports."""

    def report(self, *statuses: Verdict) -> SolveReport:
        report = SolveReport(name="t", identifier="", variables=("n",), settings={})
        for direction, verdict in zip((Direction.LOWER, Direction.UPPER), statuses):
            report.directions[direction] = DirectionReport(direction, verdict=verdict)
        return report

    def test_exit_codes(self) -> None:
        """Proved everywhere is 0, any Unknown is 2 and otherwise a refutation is 3."""

        proved = Verdict.proved("symbolic")
        refuted = Verdict.refuted("sampling", (1,), Fraction(1), Fraction(0))
        unknown = Verdict.unknown("open")
        self.assertEqual(self.report(proved, proved).exit_code, EXIT_PROVED)
        self.assertEqual(self.report(proved, unknown).exit_code, EXIT_UNKNOWN)
        self.assertEqual(self.report(unknown, refuted).exit_code, EXIT_UNKNOWN)
        self.assertEqual(self.report(proved, refuted).exit_code, EXIT_REFUTED)
        self.assertEqual(self.report().exit_code, EXIT_UNKNOWN)


class CommandTests(unittest.TestCase):
    """``check`` and ``eval`` on small equations."""

    def test_check_candidates(self) -> None:
        """Sound candidates prove and small ones are refuted."""

        document = triangle_document()
        self.assertTrue(cmd_check(document, "piece true : 1/2*n*n + 1/2*n\n", "upper", SMALL).is_proved)
        self.assertTrue(cmd_check(document, "piece true : 1/2*n*n + 1/2*n\n", "lower", SMALL).is_proved)
        verdict = cmd_check(document, "piece true : 1/2*n*n\n", "upper", SMALL)
        self.assertEqual(verdict.status, VerdictStatus.REFUTED)

    def test_hybrid_check(self) -> None:
        """A finite region routes the check through hybrid verification."""

        verdict = cmd_check(
            triangle_document(),
            "piece n = 5 : 100\npiece true : 1/2*n*n + 1/2*n\n",
            "upper",
            SMALL,
            d1=parse_guard("n <= 9", ("n",)),
        )
        self.assertTrue(verdict.is_proved)
        self.assertEqual(verdict.method, "hybrid")

    def test_lower_bounds_need_termination(self) -> None:
        """A prefixpoint proof is downgraded when the equation diverges."""

        document = parse_recurrence_file("vars n\ncase n >= 1 : f(n + 1)\ncase n = 0 : 0\n")
        verdict = cmd_check(document, "piece true : 0\n", "lower", SMALL)
        self.assertEqual(verdict.status, VerdictStatus.UNKNOWN)
        self.assertIn("termination", verdict.reason)

    def test_eval(self) -> None:
        """Points are evaluated exactly; wrong arity is a usage error."""

        status = cmd_eval(triangle_document(), [4], SMALL)
        self.assertEqual(status.outcome, EvalOutcome.VALUE)
        self.assertEqual(status.value, 10)
        with self.assertRaises(ValueError):
            cmd_eval(triangle_document(), [1, 2], SMALL)


class SolveTests(unittest.TestCase):
    """End-to-end solves with a reduced sample."""

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "triangle.rec"
        self.path.write_text(TRIANGLE, encoding="utf-8")

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_solve_reports_both_directions(self) -> None:
        """Both directions are reported with a quality against the reference."""

        document = load_recurrence(self.path)
        reference = parse_expr("1/2*n*n + 1/2*n", ("n",))
        report = cmd_solve(document, "both", SMALL, reference=reference)
        self.assertEqual(set(report.directions), {Direction.LOWER, Direction.UPPER})
        self.assertGreater(report.sample_size, 0)
        self.assertEqual(report.to_dict()["exit_code"], report.exit_code)
        self.assertTrue(report.render_text().startswith("Recurrence triangle over (n)"))
        for direction in report.directions.values():
            self.assertIsNotNone(direction.quality)

    def test_bridge_failures_become_unknown(self) -> None:
        """A broken CAS bridge is reported instead of raised."""

        document = load_recurrence(self.path)
        with patch.object(solver_service, "_solve_direction", side_effect=CASBridgeError("bad reply")):
            report = cmd_solve(document, "upper", SMALL)
        upper = report.directions[Direction.UPPER]
        self.assertEqual(upper.status, VerdictStatus.UNKNOWN)
        self.assertIn("cas: bad reply", upper.errors)
        self.assertEqual(report.exit_code, EXIT_UNKNOWN)

    def test_undefined_everywhere(self) -> None:
        """Without any defined sample point nothing is fitted."""

        document = parse_recurrence_file("vars n\ncase n >= 0 : f(n + 1)\n")
        report = cmd_solve(document, "both", SMALL)
        self.assertEqual(report.sample_size, 0)
        self.assertEqual(report.exit_code, EXIT_UNKNOWN)
        self.assertTrue(report.errors)


class BenchTests(unittest.TestCase):
    """Suite runs and their tables."""

    def test_empty_suite_and_bad_paths(self) -> None:
        """An empty directory gives a header-only table; files are rejected."""

        with tempfile.TemporaryDirectory() as tmp:
            table = cmd_bench(tmp, SMALL)
            self.assertEqual(table.rows, [])
            self.assertEqual(table.to_csv(), ",".join(BENCH_COLUMNS) + "\n")
            with self.assertRaises(ValueError):
                cmd_bench(Path(tmp) / "missing", SMALL)

    def test_broken_benchmarks_are_captured(self) -> None:
        """A file that does not parse yields a row with an error."""

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.rec"
            path.write_text("vars n\ncase n >= 1 : f(n - 1) + $\n", encoding="utf-8")
            row = run_benchmark(str(path), SMALL)
        self.assertEqual(row.name, "broken")
        self.assertTrue(row.error)
        self.assertEqual(row.ub_verdict, "")

    def test_table_rendering(self) -> None:
        """Rows are written in column order with rounded seconds."""

        table = BenchTable([BenchRow("3", "fib", "exponential", "proved", "unknown", "Θ", "O", seconds=1.23456)])
        lines = table.to_csv().splitlines()
        self.assertEqual(lines[1], "3,fib,exponential,proved,unknown,Θ,O,,,1.235,")
        self.assertIn("[Θ, O]", table.render_text())


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
