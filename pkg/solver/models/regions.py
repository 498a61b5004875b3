"""Region algebra for the checker: residue splits, enumeration and slack parametrisations."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
import itertools
import logging
import math
from typing import Iterable, Sequence

from ortools.linear_solver import pywraplp
import sympy as sp

from solver.models.candidate import Candidate, Piece
from solver.models.expr import (
    CeilDiv,
    Const,
    Expr,
    FloorDiv,
    Guard,
    Point,
    Var,
    calls,
    variables,
    walk,
)

LOGGER = logging.getLogger(__name__)

DEFAULT_FINITE_CAP = 4096
DEFAULT_RESIDUE_CAP = 30
SAMPLE_BOX_CAP = 300_000


class RegionNotEnumerableError(RuntimeError):
    """Raised when a region that must be enumerated is infinite or too large."""


def is_empty(guard: Guard, nvars: int) -> bool:
    return guard.bounds(nvars) is None


def relaxation_feasible(guard: Guard, nvars: int) -> bool:
    """GLOP feasibility of the rational relaxation over nonnegative variables.

    ``False`` certifies that the guard has no integer point; an unavailable
    solver answers ``True``.
    """

    solver = pywraplp.Solver.CreateSolver("GLOP")
    if solver is None:  # pragma: no cover
        LOGGER.warning("GLOP is unavailable; relaxation check skipped")
        return True
    infinity = solver.infinity()
    x = [solver.NumVar(0.0, infinity, f"x{k + 1}") for k in range(nvars)]
    for constraint in guard.constraints:
        for canonical in constraint.padded(nvars).normalized():
            if not any(canonical.coeffs):
                if canonical.const > 0 or (canonical.op == "=" and canonical.const != 0):
                    return False
                continue
            upper = float(canonical.const) if canonical.op == "=" else infinity
            row = solver.Constraint(float(canonical.const), upper)
            for k, coefficient in enumerate(canonical.coeffs):
                if coefficient:
                    row.SetCoefficient(x[k], float(coefficient))
    return solver.Solve() != pywraplp.Solver.INFEASIBLE


def is_empty_exact(guard: Guard, nvars: int) -> bool:
    """Interval propagation first, then the LP relaxation."""

    return is_empty(guard, nvars) or not relaxation_feasible(guard, nvars)


def uncovered(region: Guard, guards: Sequence[Guard], nvars: int, cap: int = DEFAULT_FINITE_CAP) -> list[Guard] | None:
    """Parts of ``region`` lying outside every guard.

    An empty list means the guards cover the region; ``None`` means the split
    grew past ``cap`` parts.
    """

    remaining = [] if is_empty_exact(region, nvars) else [region]
    for guard in guards:
        if not remaining:
            break
        complement = guard.complement()
        split: list[Guard] = []
        for part in remaining:
            for negation in complement:
                rest = part.conjoin(negation)
                if not is_empty_exact(rest, nvars):
                    split.append(rest)
        if len(split) > cap:
            return None
        remaining = split
    return remaining


def sample_point(region: Guard, nvars: int, reach: int = 64) -> Point | None:
    """A small integer point of ``region``, searched in the box ``[0, reach]^nvars``."""

    while reach > 1 and (reach + 1) ** nvars > SAMPLE_BOX_CAP:
        reach //= 2
    box = region.conjoin(Guard.box([reach] * nvars))
    points = enumerate_points(box, nvars, SAMPLE_BOX_CAP)
    return min(points, key=sum) if points else None


def enumerate_points(guard: Guard, nvars: int, cap: int) -> list[Point] | None:
    """All nonnegative integer points of ``guard``; ``None`` if unbounded or over ``cap``."""

    box = guard.bounds(nvars)
    if box is None:
        return []
    if any(upper is None for _, upper in box):
        return None
    ranges = [range(lower or 0, upper + 1) for lower, upper in box]  # type: ignore[operator]
    size = math.prod(len(r) for r in ranges)
    if size > cap:
        return None
    return [tuple(p) for p in itertools.product(*ranges) if guard.holds(p)]


# ---------------------------------------------------------------------------
# Residue classes


@dataclass(frozen=True, slots=True)
class ResidueClass:
    """``x[v] = modulus * w[v] + residue[v]`` for split variables, identity elsewhere."""

    modulus: int
    residues: tuple[int | None, ...]

    @classmethod
    def identity(cls, nvars: int) -> ResidueClass:
        return cls(1, (None,) * nvars)

    @property
    def is_identity(self) -> bool:
        return all(r is None for r in self.residues)

    def bindings(self) -> list[Expr]:
        bound: list[Expr] = []
        for index, residue in enumerate(self.residues):
            if residue is None:
                bound.append(Var(index))
            else:
                scaled = Var(index) if self.modulus == 1 else Const(self.modulus) * Var(index)
                bound.append(scaled if residue == 0 else scaled + residue)
        return bound

    def to_point(self, w: Sequence[int]) -> Point:
        return tuple(
            int(value) if residue is None else self.modulus * int(value) + residue
            for value, residue in zip(w, self.residues)
        )

    def describe(self) -> str:
        if self.is_identity:
            return ""
        parts = [f"x{k + 1}≡{r} mod {self.modulus}" for k, r in enumerate(self.residues) if r is not None]
        return ", ".join(parts)


def call_divisors(body: Expr) -> tuple[set[int], set[int]]:
    """Divisors of floor/ceil nodes inside call arguments, and the variables under them."""

    divisors: set[int] = set()
    split: set[int] = set()
    for call in calls(body):
        for arg in call.args:
            for node in walk(arg):
                if isinstance(node, (FloorDiv, CeilDiv)):
                    divisors.add(node.divisor)
                    split.update(variables(node.arg))
    return divisors, split


def residue_classes(nvars: int, divisors: Iterable[int], split: Iterable[int], cap: int) -> list[ResidueClass] | None:
    """Residue split modulo the lcm of ``divisors``; ``None`` when the lcm exceeds ``cap``."""

    divisors = [d for d in divisors if d > 1]
    if not divisors:
        return [ResidueClass.identity(nvars)]
    modulus = math.lcm(*divisors)
    if modulus > cap:
        return None
    split = sorted(set(split))
    classes = []
    for combo in itertools.product(range(modulus), repeat=len(split)):
        residues: list[int | None] = [None] * nvars
        for var, residue in zip(split, combo):
            residues[var] = residue
        classes.append(ResidueClass(modulus, tuple(residues)))
    return classes


# ---------------------------------------------------------------------------
# Candidate pieces as disjoint regions


def effective_pieces(candidate: Candidate) -> list[tuple[Guard, Piece]]:
    """Disjoint regions matching the candidate's evaluation order: tables first."""

    regions: list[tuple[Guard, Piece]] = []
    earlier: list[Guard] = []
    ordered = list(candidate.table_pieces) + list(candidate.expr_pieces)
    for piece in ordered:
        parts = [piece.guard]
        for previous in earlier:
            complement = previous.complement()
            parts = [part.conjoin(neg) for part in parts for neg in complement]
        regions.extend((part, piece) for part in parts)
        earlier.append(piece.guard)
    return regions


def prune(regions: Iterable[tuple[Guard, Piece]], nvars: int) -> list[tuple[Guard, Piece]]:
    return [(guard, piece) for guard, piece in regions if not is_empty(guard, nvars)]


# ---------------------------------------------------------------------------
# Slack parametrisations


@dataclass(frozen=True)
class Parametrisation:
    """Expresses every variable through nonnegative slacks; empty regions are flagged."""

    values: tuple[sp.Expr, ...]
    slacks: tuple[sp.Symbol, ...]
    empty: bool = False
    label: str = ""


_Row = tuple[dict[int, Fraction], Fraction]


def _rows(guard: Guard, nvars: int) -> tuple[list[_Row], list[_Row]]:
    equalities: list[_Row] = []
    inequalities: list[_Row] = []
    for constraint in guard.constraints:
        for canonical in constraint.padded(nvars).normalized():
            row = {k: Fraction(c) for k, c in enumerate(canonical.coeffs) if c}
            target = equalities if canonical.op == "=" else inequalities
            target.append((row, Fraction(canonical.const)))
    for index in range(nvars):
        inequalities.append(({index: Fraction(1)}, Fraction(0)))
    box = guard.bounds(nvars)
    if box is not None:
        for index, (lower, upper) in enumerate(box):
            if lower is not None and lower == upper:
                equalities.append(({index: Fraction(1)}, Fraction(lower)))
            elif upper is not None:
                inequalities.append(({index: Fraction(-1)}, Fraction(-upper)))
            if lower is not None and lower > 0:
                inequalities.append(({index: Fraction(1)}, Fraction(lower)))
    return equalities, inequalities


def _substitute_row(row: _Row, var: int, expression: _Row) -> _Row:
    coeffs, const = row
    factor = coeffs.get(var)
    if not factor:
        return row
    merged = {k: v for k, v in coeffs.items() if k != var}
    sub_coeffs, sub_const = expression
    for k, v in sub_coeffs.items():
        merged[k] = merged.get(k, Fraction(0)) + factor * v
    merged = {k: v for k, v in merged.items() if v}
    return merged, const - factor * sub_const


def _anchor_options(inequalities: Sequence[_Row], var: int) -> tuple[list[_Row], list[_Row]]:
    """Lower and upper anchors ``x[var] >= expr`` / ``x[var] <= expr`` (expr over other variables)."""

    lower: list[_Row] = []
    upper: list[_Row] = []
    for coeffs, const in inequalities:
        a = coeffs.get(var)
        if not a:
            continue
        rest = {k: -v / a for k, v in coeffs.items() if k != var}
        anchor = (rest, const / a)
        (lower if a > 0 else upper).append(anchor)
    return lower, upper


def _depends(anchors: dict[int, tuple[bool, _Row]], start: int, target: int) -> bool:
    stack = [start]
    seen: set[int] = set()
    while stack:
        node = stack.pop()
        if node == target:
            return True
        if node in seen or node not in anchors:
            continue
        seen.add(node)
        stack.extend(anchors[node][1][0].keys())
    return False


def _integral(anchor: _Row) -> bool:
    return all(v.denominator == 1 for v in anchor[0].values())


def _tighten(anchor: _Row, upper: bool) -> _Row:
    """Round the constant of an integer-coefficient anchor to the integer lattice."""

    coeffs, const = anchor
    if not _integral(anchor):
        return anchor
    return coeffs, Fraction(math.floor(const) if upper else math.ceil(const))


def _choose_anchors(
    free: Sequence[int], inequalities: Sequence[_Row], prefer_upper: set[int], prefer_difference: bool
) -> dict[int, tuple[bool, _Row]]:
    """Pick one anchor per free variable, keeping the dependency graph acyclic."""

    anchors: dict[int, tuple[bool, _Row]] = {}
    for var in free:
        lower, upper = _anchor_options(inequalities, var)
        from_above = var in prefer_upper and bool(upper)
        pool = upper if from_above else lower
        constants = [a for a in pool if not a[0]]
        differences = [a for a in pool if a[0] and all(k in free for k in a[0])]
        ordered: list[_Row] = list(differences) if prefer_difference else []
        if constants:
            pick = min if from_above else max
            ordered.append(pick(constants, key=lambda a: a[1]))
        if not prefer_difference:
            ordered.extend(differences)
        for anchor in ordered:
            if any(_depends(anchors, k, var) for k in anchor[0]):
                continue
            anchors[var] = (from_above, _tighten(anchor, from_above))
            break
        else:
            anchors[var] = (False, ({}, Fraction(0)))
    return anchors


def slack_parametrisations(guard: Guard, nvars: int, max_variants: int = 4) -> list[Parametrisation]:
    """Substitutions ``x = anchor + m`` (or ``anchor - m``) with ``m >= 0`` covering the region."""

    equalities, inequalities = _rows(guard, nvars)
    solved: dict[int, _Row] = {}
    pending = list(equalities)
    while pending:
        coeffs, const = pending.pop(0)
        if not coeffs:
            if const != 0:
                return [Parametrisation((), (), empty=True, label="inconsistent equalities")]
            continue
        var = min(coeffs, key=lambda k: (abs(coeffs[k]) != 1, k))
        a = coeffs[var]
        expression: _Row = ({k: -v / a for k, v in coeffs.items() if k != var}, const / a)
        solved = {k: _substitute_row(v, var, expression) for k, v in solved.items()}
        solved[var] = expression
        pending = [_substitute_row(row, var, expression) for row in pending]
        inequalities = [_substitute_row(row, var, expression) for row in inequalities]

    for coeffs, const in inequalities:
        if not coeffs and const > 0:
            return [Parametrisation((), (), empty=True, label="inconsistent bounds")]
    inequalities = [row for row in inequalities if row[0]]

    free = [k for k in range(nvars) if k not in solved]
    upper_capable = [v for v in free if any(not a[0] for a in _anchor_options(inequalities, v)[1])]

    plans: list[tuple[set[int], bool, str]] = [(set(), True, "difference anchors"), (set(), False, "lower bounds")]
    for var in upper_capable:
        plans.append(({var}, True, f"x{var + 1} from above"))
    if len(upper_capable) > 1:
        plans.append((set(upper_capable), True, "upper anchors"))

    results: list[Parametrisation] = []
    seen: set[tuple[str, ...]] = set()
    for prefer_upper, prefer_difference, label in plans:
        anchors = _choose_anchors(free, inequalities, prefer_upper, prefer_difference)
        param = _materialise(nvars, free, anchors, solved, label)
        key = tuple(str(v) for v in param.values)
        if key in seen:
            continue
        seen.add(key)
        results.append(param)
        if len(results) >= max_variants:
            break
    return results


def _materialise(
    nvars: int,
    free: Sequence[int],
    anchors: dict[int, tuple[bool, _Row]],
    solved: dict[int, _Row],
    label: str,
) -> Parametrisation:
    slacks = {
        var: sp.Symbol(f"m{var + 1}", nonnegative=True, integer=_integral(anchors[var][1]) or None)
        for var in free
    }
    values: dict[int, sp.Expr] = {}

    def resolve(var: int) -> sp.Expr:
        if var in values:
            return values[var]
        from_above, (coeffs, const) = anchors[var]
        base = sp.Rational(const.numerator, const.denominator)
        for k, v in coeffs.items():
            base += sp.Rational(v.numerator, v.denominator) * resolve(k)
        values[var] = base - slacks[var] if from_above else base + slacks[var]
        return values[var]

    for var in free:
        resolve(var)
    for var, (coeffs, const) in solved.items():
        expr = sp.Rational(const.numerator, const.denominator)
        for k, v in coeffs.items():
            expr += sp.Rational(v.numerator, v.denominator) * values[k]
        values[var] = expr
    ordered = tuple(values.get(k, sp.Integer(0)) for k in range(nvars))
    return Parametrisation(ordered, tuple(slacks[var] for var in free), label=label)
