"""Bound checking: exact measures, symbolic comparison, hybrid composition and ranking checks."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
import itertools
import logging
from typing import Any, Callable, Iterable, Sequence

import sympy as sp
from sympy.core.function import AppliedUndef

from solver.models.candidate import Candidate, CandidateCoverageError, Direction, Piece, single_piece
from solver.models.evaluator import RecurrenceEvaluator
from solver.models.expr import (
    BuiltinDomainError,
    Call,
    Const,
    Expr,
    ExprError,
    Guard,
    Ite,
    Max,
    Min,
    NonLinearGuardError,
    Point,
    _rebuild,
    arity_hint,
    calls,
    contains_call,
    replace_calls,
    simplify_divisions,
    substitute,
    symbols_for,
    to_sympy,
    walk,
)
from solver.models.recurrence import Case, NotAffineError, Recurrence, classify, default_validation_points
from solver.models.regions import (
    DEFAULT_FINITE_CAP,
    DEFAULT_RESIDUE_CAP,
    RegionNotEnumerableError,
    ResidueClass,
    call_divisors,
    effective_pieces,
    enumerate_points,
    is_empty,
    prune,
    residue_classes,
    sample_point,
    slack_parametrisations,
    uncovered,
)

LOGGER = logging.getLogger(__name__)

HYBRID_REGION_CAP = 10**6
MAX_PIECE_COMBINATIONS = 4096
MAX_LIFTED_BRANCHES = 64


class VerdictStatus(str, Enum):
    PROVED = "proved"
    REFUTED = "refuted"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    """Outcome of a bound check.

    ``Refuted`` always names a point whose violation can be recomputed exactly;
    ``kind`` says whether the point breaks the bound itself or its inductivity.
    """

    status: VerdictStatus
    method: str = ""
    point: Point | None = None
    lhs: Fraction | None = None
    rhs: Fraction | None = None
    kind: str = "inductivity"
    points_checked: int = 0
    max_violation: Fraction | None = None
    reason: str = ""
    regions: int = 0

    @classmethod
    def proved(cls, method: str, *, regions: int = 0, points_checked: int = 0) -> Verdict:
        return cls(VerdictStatus.PROVED, method, regions=regions, points_checked=points_checked)

    @classmethod
    def refuted(
        cls,
        method: str,
        point: Sequence[int],
        lhs: Fraction,
        rhs: Fraction,
        *,
        kind: str = "inductivity",
        points_checked: int = 0,
    ) -> Verdict:
        return cls(
            VerdictStatus.REFUTED,
            method,
            point=tuple(int(x) for x in point),
            lhs=lhs,
            rhs=rhs,
            kind=kind,
            points_checked=points_checked,
            max_violation=abs(lhs - rhs),
        )

    @classmethod
    def unknown(cls, reason: str, *, method: str = "", points_checked: int = 0, regions: int = 0) -> Verdict:
        return cls(
            VerdictStatus.UNKNOWN, method, reason=reason, points_checked=points_checked, regions=regions
        )

    @property
    def is_proved(self) -> bool:
        return self.status is VerdictStatus.PROVED

    @property
    def is_refuted(self) -> bool:
        return self.status is VerdictStatus.REFUTED

    def to_dict(self) -> dict[str, Any]:
        def text(value: Fraction | None) -> str | None:
            return None if value is None else str(value)

        return {
            "status": self.status.value,
            "method": self.method,
            "point": list(self.point) if self.point is not None else None,
            "lhs": text(self.lhs),
            "rhs": text(self.rhs),
            "kind": self.kind,
            "points_checked": self.points_checked,
            "max_violation": text(self.max_violation),
            "reason": self.reason,
            "regions": self.regions,
        }


@dataclass(frozen=True, slots=True)
class CheckOptions:
    symbolic: bool = True
    finite_region_cap: int = DEFAULT_FINITE_CAP
    residue_cap: int = DEFAULT_RESIDUE_CAP
    max_variants: int = 4
    falsify_points: Sequence[Point] | None = None


@dataclass(frozen=True)
class ComparisonTask:
    """``lhs`` against ``rhs`` on ``region``: upper wants ``lhs <= rhs``, lower ``lhs >= rhs``."""

    direction: Direction
    region: Guard
    lhs: Expr
    rhs: Expr
    nvars: int


Fallback = Callable[[ComparisonTask], Verdict]


# ---------------------------------------------------------------------------
# Sampled checks


def inductivity_measure(r: Recurrence, candidate: Candidate, points: Iterable[Sequence[int]]) -> list[Fraction]:
    """Exact ``Φf̂ - f̂`` at each point.

    Raises ``CandidateCoverageError`` when a point or one of its call targets is not covered.
    """

    measures: list[Fraction] = []
    for point in points:
        value = candidate.measure(r, point)
        if value is None:
            raise CandidateCoverageError(f"Measure undefined at {tuple(point)}: non-integer call argument.")
        measures.append(value)
    return measures


@dataclass
class FalsifyReport:
    checked: int = 0
    violation: Verdict | None = None
    max_violation: Fraction = Fraction(0)
    undefined: int = 0

    @property
    def refuted(self) -> bool:
        return self.violation is not None


def falsify(
    r: Recurrence,
    candidate: Candidate,
    points: Iterable[Sequence[int]],
    *,
    evaluator: RecurrenceEvaluator | None = None,
    within: Sequence[Guard] | None = None,
    dominance: bool = True,
) -> FalsifyReport:
    """Scan ``points`` for a dominance or inductivity violation; the first one found is kept."""

    evaluator = evaluator or RecurrenceEvaluator(r)
    sign = candidate.direction.sign
    report = FalsifyReport()
    for raw in points:
        point = tuple(int(x) for x in raw)
        if not r.in_domain(point):
            continue
        if within is not None and not any(guard.holds(point) for guard in within):
            continue
        report.checked += 1
        try:
            claimed = candidate.evaluate(point)
            if dominance:
                status = evaluator.evaluate(point)
                if status.ok:
                    assert status.value is not None
                    excess = (status.value - claimed) * sign
                    if excess > 0:
                        report.max_violation = max(report.max_violation, excess)
                        report.violation = Verdict.refuted(
                            "sampling", point, status.value, claimed, kind="bound", points_checked=report.checked
                        )
                        return report
            applied = r.apply(point, candidate.evaluate)
        except (CandidateCoverageError, BuiltinDomainError, ExprError) as exc:
            LOGGER.debug("Skipping %s during falsification: %s", point, exc)
            report.undefined += 1
            continue
        if applied is None:
            report.undefined += 1
            continue
        excess = (applied - claimed) * sign
        if excess > 0:
            report.max_violation = max(report.max_violation, excess)
            report.violation = Verdict.refuted(
                "sampling", point, applied, claimed, kind="inductivity", points_checked=report.checked
            )
            return report
    return report


# ---------------------------------------------------------------------------
# Symbolic comparison


def _poly_nonnegative(expr: sp.Expr, slacks: Sequence[sp.Symbol]) -> bool:
    expr = sp.expand(expr)
    if expr.is_number:
        return bool(expr.is_nonnegative)
    if not expr.free_symbols <= set(slacks):
        return False
    try:
        poly = sp.Poly(expr, *slacks)
    except sp.PolynomialError:
        return False
    return all(coefficient >= 0 for coefficient in poly.coeffs())


def _is_log2floor(node: sp.Basic) -> bool:
    return isinstance(node, AppliedUndef) and node.func.__name__ == "log2floor"


def _resolve_extrema(expr: sp.Expr, slacks: Sequence[sp.Symbol]) -> sp.Expr:
    mapping: dict[sp.Expr, sp.Expr] = {}
    for node in expr.atoms(sp.Max, sp.Min):
        args = list(node.args)
        for arg in args:
            others = [other for other in args if other is not arg]
            if isinstance(node, sp.Max):
                dominant = all(_poly_nonnegative(arg - other, slacks) for other in others)
            else:
                dominant = all(_poly_nonnegative(other - arg, slacks) for other in others)
            if dominant:
                mapping[node] = arg
                break
    return expr.xreplace(mapping) if mapping else expr


def _split_log2floor(expr: sp.Expr, slacks: Sequence[sp.Symbol]) -> sp.Expr:
    """``log2floor(2^j·s + r) = j + log2floor(s)`` for integer ``s >= 1`` and ``0 <= r < 2^j``."""

    mapping: dict[sp.Expr, sp.Expr] = {}
    for node in expr.atoms(AppliedUndef):
        if not _is_log2floor(node):
            continue
        arg = sp.expand(node.args[0])
        if arg.is_Integer and arg >= 1:
            mapping[node] = sp.Integer(int(arg).bit_length() - 1)
            continue
        if not arg.free_symbols <= set(slacks) or not all(s.is_integer for s in arg.free_symbols):
            continue
        try:
            poly = sp.Poly(arg, *slacks)
        except sp.PolynomialError:
            continue
        constant = poly.coeff_monomial(1)
        rest = [c for monom, c in poly.terms() if any(monom)]
        if not rest or not all(c.is_Integer for c in rest) or not constant.is_Integer:
            continue
        common = int(sp.gcd_list(rest))
        shift = (common & -common).bit_length() - 1 if common else 0
        if shift == 0:
            continue
        residue = int(constant) % (1 << shift)
        quotient = sp.expand((arg - residue) / (1 << shift))
        if _poly_nonnegative(quotient - 1, slacks):
            mapping[node] = shift + node.func(quotient)
    return expr.xreplace(mapping) if mapping else expr


def _merge_factorials(expr: sp.Expr) -> sp.Expr:
    """Rewrite ``(m+k)!`` as ``(m+j)!·Π(m+i)`` over the smallest offset ``j`` of each family."""

    groups: dict[sp.Expr, list[tuple[int, sp.Expr]]] = defaultdict(list)
    for node in expr.atoms(sp.factorial):
        offset, rest = node.args[0].as_coeff_Add()
        if offset.is_Integer:
            groups[rest].append((int(offset), node))
    mapping: dict[sp.Expr, sp.Expr] = {}
    for rest, members in groups.items():
        low = min(offset for offset, _ in members)
        anchor = sp.factorial(rest + low)
        for offset, node in members:
            if offset > low:
                mapping[node] = anchor * sp.Mul(*[rest + i for i in range(low + 1, offset + 1)])
    return expr.xreplace(mapping) if mapping else expr


def _normalise(expr: sp.Expr, slacks: Sequence[sp.Symbol]) -> sp.Expr:
    for _ in range(4):
        previous = expr
        expr = sp.expand(expr)
        expr = _resolve_extrema(expr, slacks)
        expr = _split_log2floor(expr, slacks)
        expr = _merge_factorials(expr)
        expr = sp.expand(expr)
        if expr == previous:
            break
    return expr


def _opaque_atoms(expr: sp.Expr, found: set[sp.Expr]) -> None:
    if expr.is_Symbol or expr.is_Number:
        return
    if isinstance(expr, (sp.Add, sp.Mul)):
        for arg in expr.args:
            _opaque_atoms(arg, found)
        return
    if isinstance(expr, sp.Pow) and expr.exp.is_Integer and expr.exp >= 0:
        _opaque_atoms(expr.base, found)
        return
    found.add(expr)


def _atom_nonnegative(atom: sp.Expr, slacks: Sequence[sp.Symbol], depth: int) -> bool:
    if isinstance(atom, (sp.floor, sp.ceiling)):
        return _certify(atom.args[0], slacks, depth + 1) is None
    if isinstance(atom, sp.Pow):
        return bool(atom.base.is_number and atom.base > 0)
    if isinstance(atom, sp.factorial) or _is_log2floor(atom):
        return True
    if isinstance(atom, sp.Max):
        return any(_certify(arg, slacks, depth + 1) is None for arg in atom.args)
    if isinstance(atom, sp.Min):
        return all(_certify(arg, slacks, depth + 1) is None for arg in atom.args)
    return False


def _certify(expr: sp.Expr, slacks: Sequence[sp.Symbol], depth: int = 0) -> str | None:
    """``None`` when ``expr >= 0`` for all nonnegative slacks, else the blocking reason."""

    if depth > 6:
        return "nesting too deep"
    expr = _normalise(expr, slacks)
    if expr.is_number:
        return None if expr.is_nonnegative else f"negative constant {expr}"
    atoms: set[sp.Expr] = set()
    _opaque_atoms(expr, atoms)
    for atom in sorted(atoms, key=sp.default_sort_key):
        if not _atom_nonnegative(atom, slacks, depth):
            return f"cannot sign {atom}"
    dummies = {atom: sp.Dummy(nonnegative=True) for atom in atoms}
    reduced = sp.expand(expr.xreplace(dummies))
    generators = list(slacks) + list(dummies.values())
    if not reduced.free_symbols <= set(generators):
        return "stray symbols"
    if reduced.is_number:
        return None if reduced.is_nonnegative else f"negative constant {reduced}"
    try:
        poly = sp.Poly(reduced, *generators)
    except sp.PolynomialError:
        return "non-polynomial residue"
    for monom, coefficient in poly.terms():
        if coefficient < 0:
            names = [str(g) for g, k in zip(generators, monom) if k]
            return f"negative coefficient {coefficient} on {'*'.join(names) or '1'}"
    return None


def symbolic_compare(
    lhs: Expr, rhs: Expr, region: Guard, nvars: int | None = None, *, max_variants: int = 4
) -> Verdict:
    """Try to prove ``lhs >= rhs`` on the integer points of ``region``.

    Variables are rewritten through nonnegative slacks and the difference is
    checked for nonnegative coefficients; failure is reported as ``Unknown``.
    """

    for node in itertools.chain(walk(lhs), walk(rhs)):
        if isinstance(node, Call):
            return Verdict.unknown("call node in comparison", method="symbolic")
    width = nvars
    if width is None:
        width = max(arity_hint(lhs), arity_hint(rhs), *(len(c.coeffs) for c in region.constraints), 0)
    symbols = symbols_for(width)
    try:
        difference = to_sympy(lhs, symbols) - to_sympy(rhs, symbols)
    except ExprError as exc:
        return Verdict.unknown(str(exc), method="symbolic")

    reasons: list[str] = []
    for param in slack_parametrisations(region, width, max_variants):
        if param.empty:
            return Verdict.proved("symbolic", regions=1)
        instance = difference.xreplace(dict(zip(symbols, param.values)))
        reason = _certify(instance, param.slacks)
        if reason is None:
            return Verdict.proved("symbolic", regions=1)
        reasons.append(f"{param.label}: {reason}")
    return Verdict.unknown("; ".join(reasons) or "no parametrisation", method="symbolic")


# ---------------------------------------------------------------------------
# Inductive check


@dataclass
class _Tally:
    regions: int = 0
    points: int = 0
    methods: set[str] = field(default_factory=set)
    reasons: list[str] = field(default_factory=list)

    def unknown(self, reason: str) -> None:
        LOGGER.debug("Region left open: %s", reason)
        self.reasons.append(reason)

    def method(self) -> str:
        for name in ("cas", "symbolic", "exhaustive"):
            if name in self.methods:
                return name
        return "exhaustive"


def _split_ites(body: Expr) -> list[tuple[Guard, Expr]]:
    """Resolve every ``ite`` into disjoint (guard, branch) pairs."""

    target = next((node for node in walk(body) if isinstance(node, Ite)), None)
    if target is None:
        return [(Guard.true(), body)]

    def pick(choice: Expr) -> Expr:
        def visit(node: Expr) -> Expr:
            if node is target:
                return choice
            return _rebuild(node, visit)

        return visit(body)

    results = [(target.guard.conjoin(g), e) for g, e in _split_ites(pick(target.then))]
    for negation in target.guard.complement():
        results.extend((negation.conjoin(g), e) for g, e in _split_ites(pick(target.otherwise)))
    return results


def _lift_extrema(body: Expr, direction: Direction) -> list[list[Expr]]:
    """Disjunction of conjunctions of call-bearing bodies free of lifted ``max``/``min``.

    Upper bounds need every branch of a ``max`` and one branch of a ``min``;
    lower bounds the dual.
    """

    target = next(
        (node for node in walk(body) if isinstance(node, (Max, Min)) and contains_call(node)), None
    )
    if target is None:
        return [[body]]

    def pick(choice: Expr) -> Expr:
        def visit(node: Expr) -> Expr:
            if node is target:
                return choice
            return _rebuild(node, visit)

        return visit(body)

    left = _lift_extrema(pick(target.left), direction)
    right = _lift_extrema(pick(target.right), direction)
    need_all = isinstance(target, Max) == (direction is Direction.UPPER)
    if need_all:
        combined = [a + b for a in left for b in right]
    else:
        combined = left + right
    return combined[:MAX_LIFTED_BRANCHES]


def _as_guards(within: Guard | Sequence[Guard] | None) -> list[Guard] | None:
    if within is None:
        return None
    if isinstance(within, Guard):
        return [within]
    return list(within)


class _Checker:
    """One ``check_inductive`` run; holds the pieces and accumulates region outcomes."""

    def __init__(
        self,
        r: Recurrence,
        candidate: Candidate,
        options: CheckOptions,
        fallback: Fallback | None,
    ) -> None:
        self.r = r
        self.candidate = candidate
        self.options = options
        self.fallback = fallback
        self.nvars = r.arity
        self.direction = candidate.direction
        self.pieces = prune(effective_pieces(candidate), self.nvars)
        self.tally = _Tally()

    def exhaust(self, points: Sequence[Point]) -> Verdict | None:
        for point in points:
            try:
                measure = self.candidate.measure(self.r, point)
            except (CandidateCoverageError, BuiltinDomainError, ExprError) as exc:
                self.tally.unknown(f"exhaustive check stopped at {point}: {exc}")
                return None
            if measure is None:
                self.tally.unknown(f"measure undefined at {point}")
                return None
            if self.candidate.violates(measure):
                rhs = self.candidate.evaluate(point)
                return Verdict.refuted(
                    "exhaustive", point, rhs + measure, rhs, points_checked=self.tally.points
                )
            self.tally.points += 1
        self.tally.regions += 1
        self.tally.methods.add("exhaustive")
        return None

    def check_zone(self, index: int, zone: Guard) -> Verdict | None:
        case = self.r.cases[index]
        if is_empty(zone, self.nvars):
            return None
        label = f"case {index + 1}"
        if not self.options.symbolic:
            self.tally.unknown(f"{label}: exact tiers disabled")
            return None
        finite = enumerate_points(zone, self.nvars, self.options.finite_region_cap)
        if finite is not None:
            return self.exhaust(finite)
        if self.r.nested:
            self.tally.unknown(f"{label}: nested call arguments have no monotonicity certificate")
            return None

        divisors, split = call_divisors(case.body)
        classes = residue_classes(self.nvars, divisors, split, self.options.residue_cap)
        if classes is None:
            self.tally.unknown(f"{label}: residue modulus exceeds {self.options.residue_cap}")
            return None
        for cls in classes:
            verdict = self.check_class(label, case, zone, cls)
            if verdict is not None:
                return verdict
        return None

    def check_class(self, label: str, case: Case, zone: Guard, cls: ResidueClass) -> Verdict | None:
        bindings = cls.bindings()
        if cls.describe():
            label = f"{label} [{cls.describe()}]"
        try:
            zone_w = zone.substitute(bindings, self.nvars)
        except NonLinearGuardError as exc:  # pragma: no cover - residue bindings are affine
            self.tally.unknown(f"{label}: {exc}")
            return None
        if is_empty(zone_w, self.nvars):
            return None
        finite = enumerate_points(zone_w, self.nvars, self.options.finite_region_cap)
        if finite is not None:
            return self.exhaust([cls.to_point(w) for w in finite])

        body = simplify_divisions(substitute(case.body, bindings), self.nvars)
        own = self.pull_pieces(bindings)
        if own is None:
            self.tally.unknown(f"{label}: candidate guards are not affine after the residue split")
            return None
        gap = self.coverage_gap(zone_w, [guard for guard, _, _ in own], cls, "point")
        if gap is not None:
            self.tally.unknown(f"{label}: {gap}")
            return None
        for ite_guard, branch in _split_ites(body):
            region = zone_w.conjoin(ite_guard)
            if is_empty(region, self.nvars):
                continue
            alternatives = _lift_extrema(branch, self.direction)
            failures: list[str] = []
            for conjunction in alternatives:
                outcome = self.check_conjunction(label, region, conjunction, own, cls)
                if isinstance(outcome, Verdict):
                    return outcome
                if outcome is None:
                    break
                failures.append(outcome)
            else:
                self.tally.unknown("; ".join(dict.fromkeys(failures)))
        return None

    def pull_pieces(self, bindings: Sequence[Expr]) -> list[tuple[Guard, Piece, Expr | None]] | None:
        pulled: list[tuple[Guard, Piece, Expr | None]] = []
        for guard, piece in self.pieces:
            try:
                guard_w = guard.substitute(bindings, self.nvars)
            except NonLinearGuardError:
                return None
            expr = None
            if piece.expr is not None:
                expr = simplify_divisions(substitute(piece.expr, bindings), self.nvars)
            pulled.append((guard_w, piece, expr))
        return pulled

    def coverage_gap(self, region: Guard, guards: Sequence[Guard], cls: ResidueClass, what: str) -> str | None:
        """``None`` when ``guards`` cover ``region``, else a reason naming a witness if one is small."""

        parts = uncovered(region, guards, self.nvars, MAX_PIECE_COMBINATIONS)
        if parts is None:
            return f"coverage of each {what} by a candidate piece is undecided"
        if not parts:
            return None
        witness = next((p for p in (sample_point(part, self.nvars) for part in parts) if p is not None), None)
        if witness is None:
            return f"some {what} is covered by no candidate piece"
        return f"{what} covered by no candidate piece from {cls.to_point(witness)}"

    def callee_options(self, call: Call) -> list[tuple[Guard, Piece, Expr | None]] | None:
        args = list(call.args)
        try:
            domain = self.r.domain.substitute(args, self.nvars)
        except NonLinearGuardError:
            return None
        options: list[tuple[Guard, Piece, Expr | None]] = []
        for guard, piece in self.pieces:
            try:
                pulled = guard.substitute(args, self.nvars).conjoin(domain)
            except NonLinearGuardError:
                return None
            expr = None
            if piece.expr is not None:
                expr = simplify_divisions(substitute(piece.expr, args), self.nvars)
            options.append((pulled, piece, expr))
        return options

    def check_conjunction(
        self,
        label: str,
        region: Guard,
        members: Sequence[Expr],
        own: Sequence[tuple[Guard, Piece, Expr | None]],
        cls: ResidueClass,
    ) -> Verdict | str | None:
        """``None`` when every member proves, a ``Verdict`` on refutation, else the reason."""

        for member in members:
            outcome = self.check_member(label, region, member, own, cls)
            if outcome is not None:
                return outcome
        return None

    def check_member(
        self,
        label: str,
        region: Guard,
        member: Expr,
        own: Sequence[tuple[Guard, Piece, Expr | None]],
        cls: ResidueClass,
    ) -> Verdict | str | None:
        member_calls = calls(member)
        callee_lists = []
        for call in member_calls:
            options = self.callee_options(call)
            if options is None:
                return f"{label}: call arguments are not affine"
            gap = self.coverage_gap(region, [guard for guard, _, _ in options], cls, "call target")
            if gap is not None:
                return f"{label}: {gap}"
            callee_lists.append(options)

        combos = itertools.product(own, *callee_lists)
        budget = MAX_PIECE_COMBINATIONS
        for combo in combos:
            budget -= 1
            if budget < 0:
                return f"{label}: too many piece combinations"
            guard = region.conjoin(*(option[0] for option in combo))
            if is_empty(guard, self.nvars):
                continue
            uses_table = any(option[1].is_table for option in combo)
            finite = enumerate_points(guard, self.nvars, self.options.finite_region_cap)
            if finite is not None:
                verdict = self.exhaust([cls.to_point(w) for w in finite])
                if verdict is not None:
                    return verdict
                continue
            if uses_table:
                return f"{label}: region touching a table piece is not enumerable"

            chosen = iter(option[2] for option in combo[1:])
            lhs = replace_calls(member, lambda _call: next(chosen))  # type: ignore[arg-type,return-value]
            lhs = simplify_divisions(lhs, self.nvars)
            rhs = combo[0][2]
            assert rhs is not None
            outcome = self.compare(guard, lhs, rhs)
            if outcome is not None:
                return f"{label}: {outcome}"
        return None

    def compare(self, region: Guard, lhs: Expr, rhs: Expr) -> str | None:
        if self.direction is Direction.UPPER:
            verdict = symbolic_compare(rhs, lhs, region, self.nvars, max_variants=self.options.max_variants)
        else:
            verdict = symbolic_compare(lhs, rhs, region, self.nvars, max_variants=self.options.max_variants)
        if verdict.is_proved:
            self.tally.regions += 1
            self.tally.methods.add("symbolic")
            return None
        if self.fallback is not None:
            external = self.fallback(ComparisonTask(self.direction, region, lhs, rhs, self.nvars))
            if external.is_proved:
                self.tally.regions += 1
                self.tally.methods.add("cas")
                return None
        return verdict.reason


def check_inductive(
    r: Recurrence,
    candidate: Candidate,
    options: CheckOptions | None = None,
    *,
    within: Guard | Sequence[Guard] | None = None,
    fallback: Fallback | None = None,
    evaluator: RecurrenceEvaluator | None = None,
    dominance: bool = True,
) -> Verdict:
    """Decide ``Φf̂ <= f̂`` (upper) or ``Φf̂ >= f̂`` (lower) on the domain, or on ``within``.

    Regions are split per case, residue class, ``ite`` branch and candidate
    piece; every region must prove for ``Proved``. Otherwise a sampled
    falsification decides between ``Refuted`` and ``Unknown``.
    """

    options = options or CheckOptions()
    guards = _as_guards(within)
    eq = classify(r)
    checker = _Checker(r, candidate, options, fallback)
    zones = guards if guards is not None else [Guard.true()]
    for index, case in enumerate(r.cases):
        for extra in zones:
            verdict = checker.check_zone(index, case.guard.conjoin(r.domain, extra))
            if verdict is not None:
                LOGGER.debug("Refuted at %s", verdict.point)
                return verdict

    tally = checker.tally
    if not eq.monotone_by_construction:
        tally.unknown("equation has no monotonicity certificate")
    if not tally.reasons:
        LOGGER.debug("Proved over %d region(s)", tally.regions)
        return Verdict.proved(tally.method(), regions=tally.regions, points_checked=tally.points)

    sample = options.falsify_points
    if sample is None:
        sample = default_validation_points(r.arity)
    report = falsify(r, candidate, sample, evaluator=evaluator, within=guards, dominance=dominance)
    if report.violation is not None:
        return report.violation
    reasons = list(dict.fromkeys(tally.reasons))
    summary = "; ".join(reasons[:5]) + (f" (+{len(reasons) - 5} more)" if len(reasons) > 5 else "")
    return Verdict.unknown(
        summary, method="sampling", points_checked=report.checked, regions=tally.regions
    )


def hybrid_verify(
    r: Recurrence,
    candidate: Candidate,
    d1: Guard | None,
    d2: Guard | Sequence[Guard],
    options: CheckOptions | None = None,
    *,
    evaluator: RecurrenceEvaluator | None = None,
    cap: int = HYBRID_REGION_CAP,
    fallback: Fallback | None = None,
) -> Verdict:
    """Exact dominance on the finite ``d1`` composed with inductivity on ``d2``."""

    if d1 is None:
        return check_inductive(r, candidate, options, fallback=fallback, evaluator=evaluator)
    second = _as_guards(d2) or []
    nvars = r.arity
    region = d1.conjoin(r.domain)
    points = enumerate_points(region, nvars, cap)
    if points is None:
        raise RegionNotEnumerableError(f"D1 is not enumerable within {cap} points.")
    if not points:
        return check_inductive(r, candidate, options, within=second or None, fallback=fallback, evaluator=evaluator)

    for point in default_validation_points(nvars):
        if r.in_domain(point) and not d1.holds(point) and not any(g.holds(point) for g in second):
            raise ValueError(f"D1 and D2 do not cover {point}.")

    try:
        candidate.check_coverage(points)
    except CandidateCoverageError as exc:
        return Verdict.unknown(str(exc), method="hybrid")
    evaluator = evaluator or RecurrenceEvaluator(r)
    sign = candidate.direction.sign
    for checked, point in enumerate(points, start=1):
        status = evaluator.evaluate(point)
        if not status.ok:
            return Verdict.unknown(
                f"least solution is {status.outcome.value} at {point}", method="hybrid", points_checked=checked
            )
        assert status.value is not None
        claimed = candidate.evaluate(point)
        if (status.value - claimed) * sign > 0:
            return Verdict.refuted("hybrid", point, status.value, claimed, kind="bound", points_checked=checked)

    inductive = check_inductive(
        r, candidate, options, within=second, fallback=fallback, evaluator=evaluator, dominance=False
    )
    if inductive.is_proved:
        return Verdict.proved("hybrid", regions=inductive.regions, points_checked=len(points) + inductive.points_checked)
    return inductive


def ranking_recurrence(r: Recurrence, quasi: bool = False) -> Recurrence:
    """Equation whose inductive upper bounds are exactly the (quasi-)ranking functions of ``r``."""

    if not classify(r).affine:
        raise NotAffineError("Ranking functions are checked on affine equations only.")
    cases = []
    for case in r.cases:
        if not case.recursive:
            cases.append(Case(case.guard, Const(0)))
            continue
        targets = [Call(call.args) for call in calls(case.body)]
        body: Expr = targets[0]
        for target in targets[1:]:
            body = Max(body, target)
        cases.append(Case(case.guard, body if quasi else Const(1) + body))
    return replace(r, cases=tuple(cases))


def check_ranking(
    r: Recurrence,
    rho: Expr | Candidate,
    *,
    quasi: bool = False,
    options: CheckOptions | None = None,
) -> Verdict:
    """``ρ >= 1 + max ρ(callee)`` on recursive cases (no ``+1`` when ``quasi``) and ``ρ >= 0`` on base cases."""

    ranked = ranking_recurrence(r, quasi)
    candidate = rho if isinstance(rho, Candidate) else single_piece(rho, Direction.UPPER)
    candidate = candidate.with_direction(Direction.UPPER)
    return check_inductive(ranked, candidate, options, dominance=False)
