"""Piecewise recurrence equations, their structural classes and call structure."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
import itertools
import logging
from typing import Callable, Iterable, Sequence

from solver.models.expr import (
    BUILTINS,
    BinOp,
    Builtin,
    Call,
    CeilDiv,
    Const,
    Expr,
    FloorDiv,
    Guard,
    Ite,
    Max,
    Min,
    NonLinearGuardError,
    Polynomial,
    Point,
    Var,
    calls,
    contains_call,
    eval_expr,
    normalize_polynomial,
    walk,
)

LOGGER = logging.getLogger(__name__)


class RecurrenceError(ValueError):
    """Raised when a recurrence is malformed."""


class GuardOverlapError(RecurrenceError):
    """Raised when two case guards hold at the same validation point."""


class GuardCoverageError(RecurrenceError):
    """Raised when no case guard holds at a validation point of the domain."""


class ArityError(RecurrenceError):
    """Raised when a call or variable does not match the equation's arity."""


class NotAffineError(RecurrenceError):
    """Raised when an operation needs an affine equation."""


class CaseRole(str, Enum):
    RECURSIVE = "recursive"
    NON_RECURSIVE = "non-recursive"


@dataclass(frozen=True, slots=True)
class Case:
    """One ``guard : body`` line of a recurrence."""

    guard: Guard
    body: Expr

    @property
    def recursive(self) -> bool:
        return contains_call(self.body)


@dataclass(frozen=True)
class Recurrence:
    """Equation ``f = Φ(f)`` defined piecewise over a domain of ``ℕ^d``."""

    variables: tuple[str, ...]
    cases: tuple[Case, ...]
    domain: Guard
    nested: bool = False

    @property
    def arity(self) -> int:
        return len(self.variables)

    def in_domain(self, point: Sequence[int]) -> bool:
        return len(point) == self.arity and all(x >= 0 for x in point) and self.domain.holds(point)

    def case_index(self, point: Sequence[int]) -> int | None:
        """Index of the first case whose guard holds, ``None`` outside the domain."""

        if not self.in_domain(point):
            return None
        for index, case in enumerate(self.cases):
            if case.guard.holds(point):
                return index
        return None

    def case_for(self, point: Sequence[int]) -> Case | None:
        index = self.case_index(point)
        return None if index is None else self.cases[index]

    def apply(self, point: Sequence[int], oracle: Callable[[Point], Fraction | None]) -> Fraction | None:
        """``Φ(oracle)(point)``, undefined outside the cases."""

        case = self.case_for(point)
        if case is None:
            return None
        return eval_expr(case.body, point, oracle)

    def recursive_indices(self) -> list[int]:
        return [index for index, case in enumerate(self.cases) if case.recursive]

    def base_indices(self) -> list[int]:
        return [index for index, case in enumerate(self.cases) if not case.recursive]


def default_validation_points(arity: int) -> list[Point]:
    """Hypercube used to check guard disjointness and coverage."""

    side = {1: 200, 2: 30, 3: 12}.get(arity, 6)
    return [tuple(p) for p in itertools.product(range(side + 1), repeat=arity)]


def build(
    cases: Iterable[tuple[Guard, Expr]] | Iterable[Case],
    variables: Sequence[str],
    domain: Guard | None = None,
    *,
    validation_points: Iterable[Sequence[int]] | None = None,
) -> Recurrence:
    """Validate cases and assemble a :class:`Recurrence`."""

    names = tuple(variables)
    if not names:
        raise RecurrenceError("A recurrence needs at least one variable.")
    if len(set(names)) != len(names):
        raise RecurrenceError("Variable names must be unique.")
    arity = len(names)

    built: list[Case] = []
    for item in cases:
        case = item if isinstance(item, Case) else Case(*item)
        _check_arity(case, arity)
        built.append(case)
    if not built:
        raise RecurrenceError("A recurrence needs at least one case.")

    domain_guard = Guard.nonnegative(arity).conjoin(domain or Guard.true())
    for constraint in domain_guard.constraints:
        if len(constraint.coeffs) > arity:
            raise ArityError("Domain guard mentions unknown variables.")

    nested = any(
        contains_call(arg) for case in built for call in calls(case.body) for arg in call.args
    )
    recurrence = Recurrence(names, tuple(built), domain_guard, nested)

    points = validation_points if validation_points is not None else default_validation_points(arity)
    _validate_guards(recurrence, points)
    LOGGER.debug("Built recurrence over %s with %d case(s)", names, len(built))
    return recurrence


def _check_arity(case: Case, arity: int) -> None:
    for constraint in case.guard.constraints:
        if len(constraint.coeffs) > arity:
            raise ArityError("Guard mentions more variables than the recurrence declares.")
    for node in walk(case.body):
        if isinstance(node, Call) and len(node.args) != arity:
            raise ArityError(f"Call has {len(node.args)} argument(s), expected {arity}.")
        if isinstance(node, Var) and node.index >= arity:
            raise ArityError(f"Variable index {node.index} out of range.")


def _validate_guards(recurrence: Recurrence, points: Iterable[Sequence[int]]) -> None:
    for raw in points:
        point = tuple(int(x) for x in raw)
        if not recurrence.in_domain(point):
            continue
        matching = [i for i, case in enumerate(recurrence.cases) if case.guard.holds(point)]
        if len(matching) > 1:
            raise GuardOverlapError(
                f"Cases {matching[0] + 1} and {matching[1] + 1} overlap at {point}."
            )
        if not matching:
            raise GuardCoverageError(f"No case covers domain point {point}.")


# ---------------------------------------------------------------------------
# Constructor API: every combinator below preserves monotonicity.


def base_case(expression: Expr) -> Expr:
    if contains_call(expression):
        raise RecurrenceError("A base expression cannot contain recursive calls.")
    return expression


def rec_call(*args: Expr) -> Call:
    if any(contains_call(arg) for arg in args):
        raise RecurrenceError("Call arguments built through the constructor API must be call-free.")
    return Call(tuple(args))


def plus(left: Expr, right: Expr) -> Expr:
    return BinOp("+", left, right)


def scaled(coefficient: Expr, expression: Expr) -> Expr:
    if contains_call(coefficient) or not is_nonnegative(coefficient):
        raise RecurrenceError("Scaling coefficients must be f-free and certifiably nonnegative.")
    return BinOp("*", coefficient, expression)


def maximum(left: Expr, right: Expr) -> Expr:
    return Max(left, right)


def minimum(left: Expr, right: Expr) -> Expr:
    return Min(left, right)


def choice(guard: Guard, then: Expr, otherwise: Expr) -> Expr:
    return Ite(guard, then, otherwise)


def floor_of(expression: Expr, divisor: int) -> Expr:
    return FloorDiv(expression, divisor)


# ---------------------------------------------------------------------------
# Classification


@dataclass(frozen=True)
class EqClass:
    """Structural flags of an equation."""

    monotone_by_construction: bool
    affine: bool
    linear_recursive: bool
    nested: bool
    roles: tuple[CaseRole, ...] = field(default_factory=tuple)


@dataclass(frozen=True, slots=True)
class AffineTerm:
    """``coefficient * f(args)`` inside an affine case body."""

    coefficient: Expr
    args: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class AffineCase:
    guard: Guard
    terms: tuple[AffineTerm, ...]
    bias: Expr


def is_nonnegative(e: Expr) -> bool:
    """Syntactic certificate that ``e >= 0`` on ``ℕ^d``."""

    match e:
        case Const(value=value):
            return value >= 0
        case Var():
            return True
        case BinOp(op="+" | "*", left=left, right=right):
            return is_nonnegative(left) and is_nonnegative(right)
        case BinOp(op="-", left=left, right=Const(value=value)):
            return value <= 0 and is_nonnegative(left)
        case FloorDiv(arg=arg) | CeilDiv(arg=arg):
            return is_nonnegative(arg)
        case Max(left=left, right=right):
            return is_nonnegative(left) or is_nonnegative(right)
        case Min(left=left, right=right):
            return is_nonnegative(left) and is_nonnegative(right)
        case Ite(then=then, otherwise=otherwise):
            return is_nonnegative(then) and is_nonnegative(otherwise)
        case Builtin(name="pow", args=(base, _)):
            return is_nonnegative(base)
        case Builtin(name="log2floor" | "factorial"):
            return True
    return False


def _is_monotone(e: Expr) -> bool:
    if not contains_call(e):
        return True
    match e:
        case Call(args=args):
            return not any(contains_call(arg) for arg in args)
        case BinOp(op="+", left=left, right=right):
            return _is_monotone(left) and _is_monotone(right)
        case BinOp(op="-", left=left, right=right):
            return _is_monotone(left) and not contains_call(right)
        case BinOp(op="*", left=left, right=right):
            if not contains_call(left):
                return is_nonnegative(left) and _is_monotone(right)
            if not contains_call(right):
                return is_nonnegative(right) and _is_monotone(left)
            return False
        case FloorDiv(arg=arg) | CeilDiv(arg=arg):
            return _is_monotone(arg)
        case Min(left=left, right=right) | Max(left=left, right=right):
            return _is_monotone(left) and _is_monotone(right)
        case Ite(then=then, otherwise=otherwise):
            return _is_monotone(then) and _is_monotone(otherwise)
        case Builtin(name=name, args=args):
            return BUILTINS[name].monotone and all(_is_monotone(arg) for arg in args)
    return False


def _plus(left: Expr, right: Expr) -> Expr:
    if left == Const(0):
        return right
    if right == Const(0):
        return left
    return BinOp("+", left, right)


def _times(coefficient: Expr, expression: Expr) -> Expr:
    if coefficient == Const(1):
        return expression
    if expression == Const(1):
        return coefficient
    return BinOp("*", coefficient, expression)


def _decompose(e: Expr) -> tuple[list[AffineTerm], Expr] | None:
    if not contains_call(e):
        return [], e
    match e:
        case Call(args=args):
            if any(contains_call(arg) for arg in args):
                return None
            return [AffineTerm(Const(1), args)], Const(0)
        case BinOp(op="+", left=left, right=right):
            a = _decompose(left)
            b = _decompose(right)
            if a is None or b is None:
                return None
            return a[0] + b[0], _plus(a[1], b[1])
        case BinOp(op="-", left=left, right=right):
            if contains_call(right):
                return None
            a = _decompose(left)
            if a is None:
                return None
            return a[0], BinOp("-", a[1], right)
        case BinOp(op="*", left=left, right=right):
            if not contains_call(left):
                coefficient, inner = left, right
            elif not contains_call(right):
                coefficient, inner = right, left
            else:
                return None
            if not is_nonnegative(coefficient):
                return None
            a = _decompose(inner)
            if a is None:
                return None
            terms = [AffineTerm(_times(coefficient, t.coefficient), t.args) for t in a[0]]
            bias = Const(0) if a[1] == Const(0) else _times(coefficient, a[1])
            return terms, bias
    return None


def affine_cases(r: Recurrence) -> tuple[AffineCase, ...]:
    """Decompose every case into ``Σ a_j f(φ_j) + b``."""

    decomposed: list[AffineCase] = []
    for index, case in enumerate(r.cases):
        parts = _decompose(case.body)
        if parts is None:
            raise NotAffineError(f"Case {index + 1} is not affine in f.")
        decomposed.append(AffineCase(case.guard, tuple(parts[0]), parts[1]))
    return tuple(decomposed)


def _is_unit(e: Expr) -> bool:
    poly = normalize_polynomial(e)
    if not isinstance(poly, Polynomial) or len(poly.terms) != 1:
        return False
    ((exps, coefficient),) = poly.terms.items()
    return not any(exps) and coefficient == 1


def classify(r: Recurrence) -> EqClass:
    """Structural class of ``r``; undecided properties come out ``False``."""

    roles = tuple(CaseRole.RECURSIVE if case.recursive else CaseRole.NON_RECURSIVE for case in r.cases)
    monotone = all(_is_monotone(case.body) for case in r.cases)
    affine = not r.nested
    linear_recursive = False
    if affine:
        try:
            decomposed = affine_cases(r)
        except NotAffineError:
            affine = False
        else:
            linear_recursive = all(
                len(case.terms) == 1 and _is_unit(case.terms[0].coefficient)
                for case, role in zip(decomposed, roles)
                if role is CaseRole.RECURSIVE
            )
    return EqClass(
        monotone_by_construction=monotone or affine,
        affine=affine,
        linear_recursive=linear_recursive,
        nested=r.nested,
        roles=roles,
    )


def linearise(r: Recurrence) -> Recurrence:
    """``Φlin = Φ - Φ(0)``: biases removed, base cases mapped to ``0``."""

    if r.nested:
        raise NotAffineError("Nested equations have no linearisation.")
    cases = []
    for affine_case in affine_cases(r):
        body: Expr = Const(0)
        for term in affine_case.terms:
            body = _plus(body, _times(term.coefficient, Call(term.args)))
        cases.append(Case(affine_case.guard, body))
    return replace(r, cases=tuple(cases))


def bias(r: Recurrence) -> tuple[Case, ...]:
    """``Φ(0)`` as a piecewise expression aligned with the cases of ``r``."""

    if r.nested:
        raise NotAffineError("Nested equations have no bias decomposition.")
    return tuple(Case(c.guard, c.bias) for c in affine_cases(r))


# ---------------------------------------------------------------------------
# Call structure


@dataclass(frozen=True)
class CallGraph:
    """Case-level call graph; edges run caller -> callee."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int, int]]
    components: tuple[tuple[int, ...], ...]

    def successors(self, node: int) -> set[int]:
        return {callee for caller, callee, _ in self.edges if caller == node}

    @property
    def dependency_edges(self) -> set[tuple[int, int]]:
        """Edges oriented callee -> caller, the way dependency diagrams are drawn."""

        return {(callee, caller) for caller, callee, _ in self.edges}


def call_graph(r: Recurrence, sample: Iterable[Sequence[int]]) -> CallGraph:
    """Sampled call edges completed by guard propagation.

    ``components`` lists the strongly connected components callees first.
    """

    edges: set[tuple[int, int, int]] = set()
    for raw in sample:
        point = tuple(int(x) for x in raw)
        caller = r.case_index(point)
        if caller is None:
            continue
        for position, call in enumerate(calls(r.cases[caller].body)):
            if any(contains_call(arg) for arg in call.args):
                continue
            target = _call_target(call, point)
            callee = None if target is None else r.case_index(target)
            if callee is not None:
                edges.add((caller, callee, position))

    for caller, case in enumerate(r.cases):
        for position, call in enumerate(calls(case.body)):
            for callee, target_case in enumerate(r.cases):
                if any(edge[:2] == (caller, callee) and edge[2] == position for edge in edges):
                    continue
                if _may_reach(r, case, call, target_case):
                    edges.add((caller, callee, position))

    nodes = tuple(range(len(r.cases)))
    return CallGraph(nodes, frozenset(edges), _strongly_connected(nodes, edges))


def _call_target(call: Call, point: Point) -> Point | None:
    values = [eval_expr(arg, point) for arg in call.args]
    if any(value is None or value.denominator != 1 for value in values):
        return None
    return tuple(int(value) for value in values)


def _may_reach(r: Recurrence, case: Case, call: Call, target: Case) -> bool:
    if any(contains_call(arg) for arg in call.args):
        return True
    try:
        preimage = target.guard.conjoin(r.domain).substitute(list(call.args), r.arity)
    except NonLinearGuardError:
        return True
    region = case.guard.conjoin(r.domain, preimage)
    return region.bounds(r.arity) is not None


def _strongly_connected(
    nodes: Sequence[int], edges: Iterable[tuple[int, int, int]]
) -> tuple[tuple[int, ...], ...]:
    adjacency: dict[int, set[int]] = {node: set() for node in nodes}
    for caller, callee, _ in edges:
        adjacency[caller].add(callee)

    index_of: dict[int, int] = {}
    lowlink: dict[int, int] = {}
    stack: list[int] = []
    on_stack: set[int] = set()
    components: list[tuple[int, ...]] = []
    counter = itertools.count()

    def visit(node: int) -> None:
        index_of[node] = lowlink[node] = next(counter)
        stack.append(node)
        on_stack.add(node)
        for successor in sorted(adjacency[node]):
            if successor not in index_of:
                visit(successor)
                lowlink[node] = min(lowlink[node], lowlink[successor])
            elif successor in on_stack:
                lowlink[node] = min(lowlink[node], index_of[successor])
        if lowlink[node] == index_of[node]:
            component = []
            while True:
                member = stack.pop()
                on_stack.discard(member)
                component.append(member)
                if member == node:
                    break
            components.append(tuple(sorted(component)))

    for node in nodes:
        if node not in index_of:
            visit(node)
    return tuple(components)


def interface_points(
    r: Recurrence,
    d1: Guard,
    d2: Guard,
    sample: Iterable[Sequence[int]],
    oracle: Callable[[Point], Fraction | None] | None = None,
) -> set[Point]:
    """Points of ``d1`` (within ``sample``) having a recursive call that lands in ``d2``.

    Nested calls are resolved through ``oracle`` when given and skipped otherwise.
    """

    found: set[Point] = set()
    for raw in sample:
        point = tuple(int(x) for x in raw)
        if not d1.holds(point):
            continue
        case = r.case_for(point)
        if case is None:
            continue
        for call in calls(case.body):
            nested = any(contains_call(arg) for arg in call.args)
            if nested and oracle is None:
                continue
            values = [eval_expr(arg, point, oracle) for arg in call.args]
            if any(value is None or value.denominator != 1 for value in values):
                continue
            target = tuple(int(value) for value in values)
            if r.in_domain(target) and d2.holds(target):
                found.add(point)
                break
    return found
