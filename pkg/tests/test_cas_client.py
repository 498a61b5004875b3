"""Tests for the external computer algebra bridge."""
from __future__ import annotations

import subprocess
import unittest
from unittest.mock import patch

from backend.app.services import cas_client
from backend.app.services.cas_client import CASBridge, CASBridgeError, cas_bridge, parse_reply, render_request
from solver.models.candidate import Direction
from solver.models.checker import ComparisonTask, VerdictStatus
from solver.models.dsl import parse_guard
from solver.models.expr import Guard, Var


def task(region: Guard | None = None) -> ComparisonTask:
    n = Var(0)
    return ComparisonTask(Direction.UPPER, region or Guard.true(), n * n, n, 1)


class ProtocolTests(unittest.TestCase):
    """Request rendering and reply decoding."""

    def test_render_request(self) -> None:
        """Requests name variables positionally."""

        self.assertEqual(render_request(task()), "CHECK upper REGION true LHS x1*x1 RHS x1")

    def test_parse_replies(self) -> None:
        """Each keyword maps onto the matching verdict."""

        self.assertTrue(parse_reply("PROVED\n", task()).is_proved)
        unknown = parse_reply("UNKNOWN quantifier elimination gave up", task())
        self.assertEqual(unknown.status, VerdictStatus.UNKNOWN)
        self.assertEqual(unknown.reason, "quantifier elimination gave up")
        refuted = parse_reply("REFUTED (3)", task())
        self.assertTrue(refuted.is_refuted)
        self.assertEqual((refuted.point, refuted.lhs, refuted.rhs), ((3,), 9, 3))

    def test_malformed_replies(self) -> None:
        """Protocol violations raise instead of producing a verdict."""

        region = parse_guard("x1 >= 5", ("x1",))
        for reply in ("", "MAYBE", "PROVED but", "REFUTED (1, 2)"):
            with self.subTest(reply=reply), self.assertRaises(CASBridgeError):
                parse_reply(reply, task())
        with self.assertRaises(CASBridgeError):
            parse_reply("REFUTED (2)", task(region))


class BridgeTests(unittest.TestCase):
    """Subprocess handling."""

    def test_disabled_bridge(self) -> None:
        """Without a command every query stays open."""

        verdict = cas_bridge(task())
        self.assertEqual(verdict.status, VerdictStatus.UNKNOWN)
        self.assertEqual(verdict.reason, "bridge-off")

    def test_reply_is_decoded(self) -> None:
        """Standard output of the command is parsed."""

        done = subprocess.CompletedProcess(["cas"], 0, stdout="PROVED\n", stderr="")
        with patch.object(cas_client.subprocess, "run", return_value=done) as run:
            verdict = CASBridge("cas --batch")(task())
        self.assertTrue(verdict.is_proved)
        self.assertEqual(run.call_args.args[0], ["cas", "--batch"])
        self.assertEqual(run.call_args.kwargs["input"], render_request(task()) + "\n")

    def test_timeout_is_unknown(self) -> None:
        """Slow tools yield ``Unknown(timeout)``."""

        with patch.object(cas_client.subprocess, "run", side_effect=subprocess.TimeoutExpired("cas", 1)):
            verdict = CASBridge("cas", timeout_s=1)(task())
        self.assertEqual(verdict.reason, "timeout")

    def test_failing_command(self) -> None:
        """A nonzero exit status is a bridge error."""

        done = subprocess.CompletedProcess(["cas"], 3, stdout="", stderr="license expired")
        with patch.object(cas_client.subprocess, "run", return_value=done):
            with self.assertRaisesRegex(CASBridgeError, "license expired"):
                CASBridge("cas")(task())


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
