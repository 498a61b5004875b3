"""Bridge to an external computer algebra system for comparisons the symbolic tier leaves open."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import re
import shlex
import subprocess
import threading

from solver.models.checker import ComparisonTask, Verdict
from solver.models.dsl import format_expr, format_guard
from solver.models.expr import eval_expr

LOGGER = logging.getLogger(__name__)

_POINT = re.compile(r"-?\d+")


class CASBridgeError(RuntimeError):
    """Raised when the external tool answers outside the protocol."""


class CASTimeoutError(RuntimeError):
    """Raised when the external tool does not answer in time."""


def render_request(task: ComparisonTask) -> str:
    """One protocol line: ``CHECK <direction> REGION <guard> LHS <expr> RHS <expr>``."""

    names = [f"x{k + 1}" for k in range(task.nvars)]
    return (
        f"CHECK {task.direction.value} "
        f"REGION {format_guard(task.region, names)} "
        f"LHS {format_expr(task.lhs, names)} "
        f"RHS {format_expr(task.rhs, names)}"
    )


def parse_reply(reply: str, task: ComparisonTask) -> Verdict:
    """Decode ``PROVED``, ``REFUTED <point>`` or ``UNKNOWN`` into a verdict."""

    lines = [line.strip() for line in reply.splitlines() if line.strip()]
    if not lines:
        raise CASBridgeError("Empty reply from the CAS bridge.")
    head, _, rest = lines[0].partition(" ")
    keyword = head.upper()

    if keyword == "PROVED" and not rest:
        return Verdict.proved("cas")
    if keyword == "UNKNOWN":
        return Verdict.unknown(rest or "cas undecided", method="cas")
    if keyword == "REFUTED":
        point = tuple(int(x) for x in _POINT.findall(rest))
        if len(point) != task.nvars:
            raise CASBridgeError(f"Refutation point {rest!r} does not have {task.nvars} coordinate(s).")
        if not task.region.holds(point):
            raise CASBridgeError(f"Refutation point {point} lies outside the queried region.")
        lhs = eval_expr(task.lhs, point)
        rhs = eval_expr(task.rhs, point)
        if lhs is None or rhs is None:
            return Verdict.unknown(f"cas refutation at {point} is not evaluable", method="cas")
        return Verdict.refuted("cas", point, lhs, rhs)
    raise CASBridgeError(f"Malformed CAS reply: {lines[0]!r}")


@dataclass
class CASBridge:
    """Runs one subprocess per comparison; disabled when ``command`` is empty."""

    command: str = ""
    timeout_s: float = 60.0
    concurrency: int = 2
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._slots = threading.BoundedSemaphore(max(1, self.concurrency))

    @property
    def enabled(self) -> bool:
        return bool(self.command.strip())

    def run(self, request: str) -> str:
        """Send ``request`` on stdin and return stdout."""

        with self._slots:
            try:
                completed = subprocess.run(
                    shlex.split(self.command),
                    input=request + "\n",
                    capture_output=True,
                    text=True,
                    encoding="utf-8",
                    timeout=self.timeout_s,
                    check=False,
                )
            except subprocess.TimeoutExpired as exc:
                raise CASTimeoutError(f"CAS did not answer within {self.timeout_s}s.") from exc
            except OSError as exc:
                raise CASBridgeError(f"Unable to start CAS command {self.command!r}.") from exc
        if completed.returncode != 0:
            raise CASBridgeError(
                f"CAS command exited with status {completed.returncode}: {completed.stderr.strip()}"
            )
        return completed.stdout

    def __call__(self, task: ComparisonTask) -> Verdict:
        if not self.enabled:
            return Verdict.unknown("bridge-off", method="cas")
        request = render_request(task)
        LOGGER.debug("CAS request: %s", request)
        try:
            reply = self.run(request)
        except CASTimeoutError:
            LOGGER.warning("CAS query timed out after %ss", self.timeout_s)
            return Verdict.unknown("timeout", method="cas")
        LOGGER.debug("CAS reply: %s", reply.strip())
        return parse_reply(reply, task)


def cas_bridge(task: ComparisonTask, bridge: CASBridge | None = None) -> Verdict:
    """Ask the configured bridge, or answer ``Unknown(bridge-off)`` without one."""

    return (bridge or CASBridge())(task)
