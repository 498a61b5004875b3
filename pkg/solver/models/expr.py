"""Symbolic expressions and linear guards over integer input variables."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import logging
import math
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np
import sympy as sp

LOGGER = logging.getLogger(__name__)

Point = tuple[int, ...]
"""Integer input vector of a recurrence."""

CallOracle = Callable[[Point], "Fraction | None"]
"""Supplies values for recursive calls; ``None`` means undefined."""

MAX_BUILTIN_ARGUMENT = 1_000_000


class ExprError(ValueError):
    """Raised when an expression or guard is malformed."""


class BuiltinDomainError(ValueError):
    """Raised when a builtin is applied outside of its domain."""


class NonLinearGuardError(ExprError):
    """Raised when a guard is pulled back through a non-affine map."""


class _Node:
    """Arithmetic sugar shared by every expression node."""

    __slots__ = ()

    def __add__(self, other: ExprLike) -> Expr:
        return BinOp("+", self, as_expr(other))

    def __radd__(self, other: ExprLike) -> Expr:
        return BinOp("+", as_expr(other), self)

    def __sub__(self, other: ExprLike) -> Expr:
        return BinOp("-", self, as_expr(other))

    def __rsub__(self, other: ExprLike) -> Expr:
        return BinOp("-", as_expr(other), self)

    def __mul__(self, other: ExprLike) -> Expr:
        return BinOp("*", self, as_expr(other))

    def __rmul__(self, other: ExprLike) -> Expr:
        return BinOp("*", as_expr(other), self)

    def __neg__(self) -> Expr:
        return BinOp("-", Const(0), self)


@dataclass(frozen=True, slots=True)
class Const(_Node):
    """Exact rational constant."""

    value: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True, slots=True)
class Var(_Node):
    """Reference to an input variable by position."""

    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ExprError("Variable index must be nonnegative.")


@dataclass(frozen=True, slots=True)
class BinOp(_Node):
    """Addition, subtraction or multiplication."""

    op: str
    left: Expr
    right: Expr

    def __post_init__(self) -> None:
        if self.op not in ("+", "-", "*"):
            raise ExprError(f"Unsupported binary operator {self.op!r}.")


@dataclass(frozen=True, slots=True)
class FloorDiv(_Node):
    """Floor division by a positive integer constant."""

    arg: Expr
    divisor: int

    def __post_init__(self) -> None:
        if not isinstance(self.divisor, int) or self.divisor <= 0:
            raise ExprError("Floor-division divisor must be a positive integer.")


@dataclass(frozen=True, slots=True)
class CeilDiv(_Node):
    """Ceiling division by a positive integer constant."""

    arg: Expr
    divisor: int

    def __post_init__(self) -> None:
        if not isinstance(self.divisor, int) or self.divisor <= 0:
            raise ExprError("Ceiling-division divisor must be a positive integer.")


@dataclass(frozen=True, slots=True)
class Min(_Node):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Max(_Node):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Ite(_Node):
    """If-then-else over an f-free guard."""

    guard: Guard
    then: Expr
    otherwise: Expr


@dataclass(frozen=True, slots=True)
class Call(_Node):
    """Recursive call of the unknown function."""

    args: tuple[Expr, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(as_expr(arg) for arg in self.args))


@dataclass(frozen=True, slots=True)
class Builtin(_Node):
    """Application of a function from the builtin bank."""

    name: str
    args: tuple[Expr, ...]

    def __post_init__(self) -> None:
        spec = BUILTINS.get(self.name)
        if spec is None:
            raise ExprError(f"Unknown builtin {self.name!r}.")
        object.__setattr__(self, "args", tuple(as_expr(arg) for arg in self.args))
        if len(self.args) != spec.arity:
            raise ExprError(f"Builtin {self.name} expects {spec.arity} argument(s).")


Expr = Union[Const, Var, BinOp, FloorDiv, CeilDiv, Min, Max, Ite, Call, Builtin]
ExprLike = Union[Expr, int, Fraction]


def as_expr(value: ExprLike) -> Expr:
    """Coerce integers and fractions into constant nodes."""

    if isinstance(value, _Node):
        return value  # type: ignore[return-value]
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    raise ExprError(f"Cannot build an expression from {value!r}.")


# ---------------------------------------------------------------------------
# Builtin bank


def _require_natural(name: str, value: Fraction) -> int:
    if value.denominator != 1 or value < 0:
        raise BuiltinDomainError(f"{name} requires a nonnegative integer, got {value}.")
    if value > MAX_BUILTIN_ARGUMENT:
        raise BuiltinDomainError(f"{name} argument {value} exceeds the supported range.")
    return int(value)


def _log2floor(value: Fraction) -> Fraction:
    number = _require_natural("log2floor", value)
    if number == 0:
        raise BuiltinDomainError("log2floor is undefined at 0.")
    return Fraction(number.bit_length() - 1)


def _pow(base: Fraction, exponent: Fraction) -> Fraction:
    return base ** _require_natural("pow exponent", exponent)


def _factorial(value: Fraction) -> Fraction:
    return Fraction(math.factorial(_require_natural("factorial", value)))


@dataclass(frozen=True, slots=True)
class BuiltinSpec:
    """Arity, exact evaluator and monotonicity flag of a builtin."""

    name: str
    dsl_name: str
    arity: int
    evaluate: Callable[..., Fraction]
    monotone: bool


BUILTINS: dict[str, BuiltinSpec] = {
    "log2floor": BuiltinSpec("log2floor", "log2floor", 1, _log2floor, True),
    "pow": BuiltinSpec("pow", "pow", 2, _pow, False),
    "factorial": BuiltinSpec("factorial", "fact", 1, _factorial, True),
}


def log2floor(arg: ExprLike) -> Builtin:
    return Builtin("log2floor", (as_expr(arg),))


def power(base: ExprLike, exponent: ExprLike) -> Builtin:
    return Builtin("pow", (as_expr(base), as_expr(exponent)))


def factorial(arg: ExprLike) -> Builtin:
    return Builtin("factorial", (as_expr(arg),))


# ---------------------------------------------------------------------------
# Guards

RELATIONS = ("<", "<=", "=", ">=", ">")


@dataclass(frozen=True, slots=True)
class LinearConstraint:
    """``sum(coeffs[k] * x[k]) <op> const`` with integer coefficients."""

    coeffs: tuple[int, ...]
    op: str
    const: int

    def __post_init__(self) -> None:
        if self.op not in RELATIONS:
            raise ExprError(f"Unsupported relation {self.op!r}.")
        object.__setattr__(self, "coeffs", tuple(int(c) for c in self.coeffs))
        object.__setattr__(self, "const", int(self.const))

    def lhs(self, point: Sequence[int]) -> int:
        return sum(c * x for c, x in zip(self.coeffs, point))

    def holds(self, point: Sequence[int]) -> bool:
        value = self.lhs(point)
        if self.op == "<":
            return value < self.const
        if self.op == "<=":
            return value <= self.const
        if self.op == "=":
            return value == self.const
        if self.op == ">=":
            return value >= self.const
        return value > self.const

    def normalized(self) -> tuple[LinearConstraint, ...]:
        """Rewrite into ``>=`` and ``=`` forms over the integers."""

        negated = tuple(-c for c in self.coeffs)
        if self.op == ">":
            return (LinearConstraint(self.coeffs, ">=", self.const + 1),)
        if self.op == "<":
            return (LinearConstraint(negated, ">=", -self.const + 1),)
        if self.op == "<=":
            return (LinearConstraint(negated, ">=", -self.const),)
        return (self,)

    def negations(self) -> tuple[LinearConstraint, ...]:
        """Disjoint constraints whose union is the integer negation."""

        if self.op == "=":
            return (
                LinearConstraint(self.coeffs, "<", self.const),
                LinearConstraint(self.coeffs, ">", self.const),
            )
        (canonical,) = self.normalized()
        return (LinearConstraint(canonical.coeffs, "<", canonical.const),)

    def padded(self, nvars: int) -> LinearConstraint:
        if len(self.coeffs) >= nvars:
            return self
        return LinearConstraint(self.coeffs + (0,) * (nvars - len(self.coeffs)), self.op, self.const)


@dataclass(frozen=True, slots=True)
class Guard:
    """Conjunction of linear constraints; the empty conjunction is ``true``."""

    constraints: tuple[LinearConstraint, ...] = ()

    @classmethod
    def true(cls) -> Guard:
        return cls(())

    @classmethod
    def box(cls, upper: Sequence[int], lower: Sequence[int] | None = None) -> Guard:
        """Guard ``lower[k] <= x[k] <= upper[k]`` for every coordinate."""

        nvars = len(upper)
        constraints: list[LinearConstraint] = []
        for index, bound in enumerate(upper):
            unit = tuple(1 if k == index else 0 for k in range(nvars))
            constraints.append(LinearConstraint(unit, "<=", bound))
            if lower is not None:
                constraints.append(LinearConstraint(unit, ">=", lower[index]))
        return cls(tuple(constraints))

    @classmethod
    def nonnegative(cls, nvars: int) -> Guard:
        constraints = []
        for index in range(nvars):
            unit = tuple(1 if k == index else 0 for k in range(nvars))
            constraints.append(LinearConstraint(unit, ">=", 0))
        return cls(tuple(constraints))

    def holds(self, point: Sequence[int]) -> bool:
        return all(constraint.holds(point) for constraint in self.constraints)

    def conjoin(self, *others: Guard) -> Guard:
        merged = list(self.constraints)
        for other in others:
            for constraint in other.constraints:
                if constraint not in merged:
                    merged.append(constraint)
        return Guard(tuple(merged))

    def is_true(self) -> bool:
        return not self.constraints

    def complement(self) -> list[Guard]:
        """Disjoint guards whose union is the negation of this guard."""

        pieces: list[Guard] = []
        prefix: list[LinearConstraint] = []
        for constraint in self.constraints:
            for negation in constraint.negations():
                pieces.append(Guard(tuple(prefix) + (negation,)))
            prefix.append(constraint)
        return pieces

    def substitute(self, bindings: Sequence[Expr], nvars: int) -> Guard:
        """Pull the guard back through ``x -> bindings(x)``.

        ``bindings[k]`` gives the new value of variable ``k`` as an expression over
        ``nvars`` variables; every binding must be affine.
        """

        forms = []
        for binding in bindings:
            form = affine_form(binding, nvars)
            if form is None:
                raise NonLinearGuardError(f"Binding {binding!r} is not affine.")
            forms.append(form)

        pulled: list[LinearConstraint] = []
        for constraint in self.constraints:
            coeffs = [Fraction(0)] * nvars
            const = Fraction(constraint.const)
            for coefficient, (linear, offset) in zip(constraint.coeffs, forms):
                if coefficient == 0:
                    continue
                for k in range(nvars):
                    coeffs[k] += coefficient * linear[k]
                const -= coefficient * offset
            scale = math.lcm(*(c.denominator for c in coeffs), const.denominator)
            pulled.append(
                LinearConstraint(
                    tuple(int(c * scale) for c in coeffs), constraint.op, int(const * scale)
                )
            )
        return Guard(tuple(pulled))

    def bounds(
        self, nvars: int, *, nonnegative: bool = True, rounds: int | None = None
    ) -> list[tuple[int | None, int | None]] | None:
        """Interval propagation; ``None`` when the guard is shown empty."""

        lower: list[int | None] = [0 if nonnegative else None] * nvars
        upper: list[int | None] = [None] * nvars
        rows: list[tuple[tuple[int, ...], int]] = []
        for constraint in self.constraints:
            for canonical in constraint.padded(nvars).normalized():
                rows.append((canonical.coeffs, canonical.const))
                if canonical.op == "=":
                    rows.append((tuple(-c for c in canonical.coeffs), -canonical.const))

        for coeffs, const in rows:
            if not any(coeffs) and const > 0:
                return None

        max_rounds = rounds if rounds is not None else 2 * nvars + 6
        for _ in range(max_rounds):
            changed = False
            for coeffs, const in rows:
                for v, a_v in enumerate(coeffs):
                    if a_v == 0:
                        continue
                    rest = 0
                    bounded = True
                    for j, a_j in enumerate(coeffs):
                        if j == v or a_j == 0:
                            continue
                        limit = upper[j] if a_j > 0 else lower[j]
                        if limit is None:
                            bounded = False
                            break
                        rest += a_j * limit
                    if not bounded:
                        continue
                    threshold = Fraction(const - rest, a_v)
                    if a_v > 0:
                        candidate = math.ceil(threshold)
                        if lower[v] is None or candidate > lower[v]:
                            lower[v] = candidate
                            changed = True
                    else:
                        candidate = math.floor(threshold)
                        if upper[v] is None or candidate < upper[v]:
                            upper[v] = candidate
                            changed = True
                    if lower[v] is not None and upper[v] is not None and lower[v] > upper[v]:
                        return None
            if not changed:
                break
        return list(zip(lower, upper))


def eval_guard(guard: Guard, point: Sequence[int]) -> bool:
    """Return whether ``point`` satisfies every constraint of ``guard``."""

    return guard.holds(point)


def guard_mask(guard: Guard, points: np.ndarray) -> np.ndarray:
    """Vectorised guard evaluation over the rows of ``points``."""

    mask = np.ones(points.shape[0], dtype=bool)
    for constraint in guard.constraints:
        coeffs = np.asarray(constraint.padded(points.shape[1]).coeffs, dtype=np.int64)
        values = points.astype(np.int64) @ coeffs
        if constraint.op == "<":
            mask &= values < constraint.const
        elif constraint.op == "<=":
            mask &= values <= constraint.const
        elif constraint.op == "=":
            mask &= values == constraint.const
        elif constraint.op == ">=":
            mask &= values >= constraint.const
        else:
            mask &= values > constraint.const
    return mask


# ---------------------------------------------------------------------------
# Evaluation


def eval_expr(e: Expr, point: Sequence[int], call_oracle: CallOracle | None = None) -> Fraction | None:
    """Evaluate ``e`` exactly at ``point``.

    Recursive calls are answered by ``call_oracle``; a call whose arguments are not
    integers, or an oracle answer of ``None``, makes the result undefined (``None``).
    Builtin domain violations raise :class:`BuiltinDomainError`.
    """

    match e:
        case Const(value=value):
            return value
        case Var(index=index):
            return Fraction(point[index])
        case BinOp(op=op, left=left, right=right):
            a = eval_expr(left, point, call_oracle)
            b = eval_expr(right, point, call_oracle)
            if a is None or b is None:
                return None
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            return a * b
        case FloorDiv(arg=arg, divisor=divisor):
            a = eval_expr(arg, point, call_oracle)
            return None if a is None else Fraction(math.floor(a / divisor))
        case CeilDiv(arg=arg, divisor=divisor):
            a = eval_expr(arg, point, call_oracle)
            return None if a is None else Fraction(math.ceil(a / divisor))
        case Min(left=left, right=right):
            a = eval_expr(left, point, call_oracle)
            b = eval_expr(right, point, call_oracle)
            return None if a is None or b is None else min(a, b)
        case Max(left=left, right=right):
            a = eval_expr(left, point, call_oracle)
            b = eval_expr(right, point, call_oracle)
            return None if a is None or b is None else max(a, b)
        case Ite(guard=guard, then=then, otherwise=otherwise):
            branch = then if guard.holds(point) else otherwise
            return eval_expr(branch, point, call_oracle)
        case Call(args=args):
            values = [eval_expr(arg, point, call_oracle) for arg in args]
            if any(value is None or value.denominator != 1 for value in values):
                return None
            if call_oracle is None:
                raise ExprError("Recursive call evaluated without a call oracle.")
            return call_oracle(tuple(int(value) for value in values))
        case Builtin(name=name, args=args):
            values = [eval_expr(arg, point, call_oracle) for arg in args]
            if any(value is None for value in values):
                return None
            return BUILTINS[name].evaluate(*values)
    raise ExprError(f"Unknown expression node {e!r}.")  # pragma: no cover


def eval_columns(e: Expr, points: np.ndarray) -> np.ndarray:
    """Float evaluation of a call-free expression over the rows of ``points``."""

    count = points.shape[0]
    match e:
        case Const(value=value):
            return np.full(count, float(value))
        case Var(index=index):
            return points[:, index].astype(float)
        case BinOp(op=op, left=left, right=right):
            a = eval_columns(left, points)
            b = eval_columns(right, points)
            with np.errstate(over="ignore", invalid="ignore"):
                if op == "+":
                    return a + b
                if op == "-":
                    return a - b
                return a * b
        case FloorDiv(arg=arg, divisor=divisor):
            return np.floor(eval_columns(arg, points) / divisor)
        case CeilDiv(arg=arg, divisor=divisor):
            return np.ceil(eval_columns(arg, points) / divisor)
        case Min(left=left, right=right):
            return np.minimum(eval_columns(left, points), eval_columns(right, points))
        case Max(left=left, right=right):
            return np.maximum(eval_columns(left, points), eval_columns(right, points))
        case Ite(guard=guard, then=then, otherwise=otherwise):
            return np.where(
                guard_mask(guard, points), eval_columns(then, points), eval_columns(otherwise, points)
            )
        case Call():
            raise ExprError("Column evaluation requires call-free expressions.")
        case Builtin(name="log2floor", args=(arg,)):
            values = eval_columns(arg, points)
            _, exponent = np.frexp(values)
            return np.where(values >= 1, exponent - 1, np.nan).astype(float)
        case Builtin(name="pow", args=(base, exponent)):
            with np.errstate(over="ignore", invalid="ignore"):
                return np.power(eval_columns(base, points), eval_columns(exponent, points))
        case Builtin(name="factorial", args=(arg,)):
            values = eval_columns(arg, points)
            return np.array([_float_factorial(value) for value in values], dtype=float)
    raise ExprError(f"Unknown expression node {e!r}.")  # pragma: no cover


def _float_factorial(value: float) -> float:
    if not np.isfinite(value) or value < 0 or value != math.floor(value):
        return math.nan
    if value > 170:
        return math.inf
    return float(math.factorial(int(value)))


# ---------------------------------------------------------------------------
# Traversal and rewriting


def children(e: Expr) -> tuple[Expr, ...]:
    match e:
        case BinOp(left=left, right=right) | Min(left=left, right=right) | Max(left=left, right=right):
            return (left, right)
        case FloorDiv(arg=arg) | CeilDiv(arg=arg):
            return (arg,)
        case Ite(then=then, otherwise=otherwise):
            return (then, otherwise)
        case Call(args=args) | Builtin(args=args):
            return args
    return ()


def walk(e: Expr) -> Iterator[Expr]:
    """Yield every node of ``e`` in post-order."""

    for child in children(e):
        yield from walk(child)
    yield e


def contains_call(e: Expr) -> bool:
    return any(isinstance(node, Call) for node in walk(e))


def calls(e: Expr) -> list[Call]:
    """Recursive calls of ``e``, innermost first."""

    return [node for node in walk(e) if isinstance(node, Call)]


def variables(e: Expr) -> set[int]:
    found = {node.index for node in walk(e) if isinstance(node, Var)}
    for node in walk(e):
        if isinstance(node, Ite):
            for constraint in node.guard.constraints:
                found.update(k for k, c in enumerate(constraint.coeffs) if c)
    return found


def arity_hint(e: Expr) -> int:
    indices = variables(e)
    return max(indices) + 1 if indices else 0


def _rebuild(e: Expr, transform: Callable[[Expr], Expr]) -> Expr:
    match e:
        case BinOp(op=op, left=left, right=right):
            return BinOp(op, transform(left), transform(right))
        case FloorDiv(arg=arg, divisor=divisor):
            return FloorDiv(transform(arg), divisor)
        case CeilDiv(arg=arg, divisor=divisor):
            return CeilDiv(transform(arg), divisor)
        case Min(left=left, right=right):
            return Min(transform(left), transform(right))
        case Max(left=left, right=right):
            return Max(transform(left), transform(right))
        case Ite(guard=guard, then=then, otherwise=otherwise):
            return Ite(guard, transform(then), transform(otherwise))
        case Call(args=args):
            return Call(tuple(transform(arg) for arg in args))
        case Builtin(name=name, args=args):
            return Builtin(name, tuple(transform(arg) for arg in args))
    return e


def substitute(e: Expr, bindings: Mapping[int, Expr] | Sequence[Expr]) -> Expr:
    """Replace variables by expressions; no simplification is attempted."""

    if isinstance(bindings, Mapping):
        table = dict(bindings)
    else:
        table = dict(enumerate(bindings))

    def visit(node: Expr) -> Expr:
        if isinstance(node, Var):
            return table.get(node.index, node)
        if isinstance(node, Ite) and node.guard.constraints:
            nvars = max(len(c.coeffs) for c in node.guard.constraints)
            full = [table.get(k, Var(k)) for k in range(nvars)]
            new_vars = max((arity_hint(b) for b in full), default=0)
            guard = node.guard.substitute(full, max(new_vars, nvars))
            return Ite(guard, visit(node.then), visit(node.otherwise))
        return _rebuild(node, visit)

    return visit(e)


def replace_calls(e: Expr, replacement: Callable[[Call], Expr]) -> Expr:
    """Rewrite calls innermost first; ``replacement`` sees already rewritten args."""

    def visit(node: Expr) -> Expr:
        if isinstance(node, Call):
            return replacement(Call(tuple(visit(arg) for arg in node.args)))
        return _rebuild(node, visit)

    return visit(e)


# ---------------------------------------------------------------------------
# Polynomials


@dataclass(frozen=True)
class Polynomial:
    """Expanded multivariate polynomial with rational coefficients."""

    nvars: int
    terms: Mapping[tuple[int, ...], Fraction] = field(default_factory=dict)

    def coefficient(self, exponents: tuple[int, ...]) -> Fraction:
        return self.terms.get(exponents, Fraction(0))

    def degree(self) -> int:
        return max((sum(exps) for exps in self.terms), default=0)

    def evaluate(self, point: Sequence[int]) -> Fraction:
        total = Fraction(0)
        for exps, coefficient in self.terms.items():
            term = coefficient
            for value, power_ in zip(point, exps):
                term *= Fraction(value) ** power_
            total += term
        return total

    def is_affine(self) -> bool:
        return self.degree() <= 1


@dataclass(frozen=True, slots=True)
class NormalizationFailure:
    """Why an expression has no polynomial normal form."""

    reason: str


_BLOCKING_KINDS: dict[type, str] = {
    Call: "call",
    Min: "min",
    Max: "max",
    Ite: "ite",
    FloorDiv: "floor",
    CeilDiv: "ceil",
    Builtin: "builtin",
}


def symbols_for(nvars: int) -> tuple[sp.Symbol, ...]:
    return tuple(sp.Symbol(f"x{k}", integer=True) for k in range(nvars))


def to_sympy(e: Expr, symbols: Sequence[sp.Symbol]) -> sp.Expr:
    """Translate a call-free expression into sympy."""

    match e:
        case Const(value=value):
            return sp.Rational(value.numerator, value.denominator)
        case Var(index=index):
            return symbols[index]
        case BinOp(op=op, left=left, right=right):
            a = to_sympy(left, symbols)
            b = to_sympy(right, symbols)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            return a * b
        case FloorDiv(arg=arg, divisor=divisor):
            return sp.floor(to_sympy(arg, symbols) / divisor)
        case CeilDiv(arg=arg, divisor=divisor):
            return sp.ceiling(to_sympy(arg, symbols) / divisor)
        case Min(left=left, right=right):
            return sp.Min(to_sympy(left, symbols), to_sympy(right, symbols))
        case Max(left=left, right=right):
            return sp.Max(to_sympy(left, symbols), to_sympy(right, symbols))
        case Builtin(name="pow", args=(base, exponent)):
            return sp.Pow(to_sympy(base, symbols), to_sympy(exponent, symbols))
        case Builtin(name="factorial", args=(arg,)):
            return sp.factorial(to_sympy(arg, symbols))
        case Builtin(name="log2floor", args=(arg,)):
            return sp.Function("log2floor")(to_sympy(arg, symbols))
    raise ExprError(f"No sympy form for {type(e).__name__} nodes.")


def to_fraction(value: sp.Rational) -> Fraction:
    rational = sp.Rational(value)
    return Fraction(int(rational.p), int(rational.q))


def normalize_polynomial(e: Expr, nvars: int | None = None) -> Polynomial | NormalizationFailure:
    """Expanded monomial map of ``e``, or the kind of node that prevents it."""

    for node in walk(e):
        kind = _BLOCKING_KINDS.get(type(node))
        if kind is not None:
            label = f"{node.name}-node" if isinstance(node, Builtin) else f"{kind}-node"
            return NormalizationFailure(label)

    width = max(nvars if nvars is not None else 0, arity_hint(e))
    if width == 0:
        value = eval_expr(e, ())
        assert value is not None
        return Polynomial(0, {(): value} if value else {})

    symbols = symbols_for(width)
    poly = sp.Poly(sp.expand(to_sympy(e, symbols)), *symbols, domain=sp.QQ)
    terms = {
        tuple(int(k) for k in exps): to_fraction(coefficient)
        for exps, coefficient in poly.terms()
        if coefficient != 0
    }
    return Polynomial(width, terms)


def affine_form(e: Expr, nvars: int) -> tuple[list[Fraction], Fraction] | None:
    """Linear coefficients and offset of an affine expression."""

    poly = normalize_polynomial(e, nvars)
    if isinstance(poly, NormalizationFailure) or not poly.is_affine():
        return None
    if any(any(exps[nvars:]) for exps in poly.terms):
        raise ExprError(f"Expression uses variables beyond the first {nvars}.")
    linear = [Fraction(0)] * nvars
    offset = Fraction(0)
    for exps, coefficient in poly.terms.items():
        if not any(exps):
            offset = coefficient
        else:
            linear[exps.index(1)] = coefficient
    return linear, offset


def monomial(exponents: Sequence[int]) -> Expr:
    """Product of variables raised to the given exponents (``1`` when empty)."""

    factors: list[Expr] = []
    for index, count in enumerate(exponents):
        factors.extend(Var(index) for _ in range(count))
    if not factors:
        return Const(1)
    product = factors[0]
    for factor in factors[1:]:
        product = BinOp("*", product, factor)
    return product


def linear_combination(terms: Sequence[tuple[Fraction, Expr]]) -> Expr:
    """``sum(c * e)`` skipping zero coefficients and unit multipliers."""

    total: Expr | None = None
    for coefficient, expression in terms:
        coefficient = Fraction(coefficient)
        if coefficient == 0:
            continue
        if expression == Const(1):
            term: Expr = Const(coefficient)
        elif coefficient == 1:
            term = expression
        else:
            term = BinOp("*", Const(coefficient), expression)
        total = term if total is None else BinOp("+", total, term)
    return total if total is not None else Const(0)


def polynomial_to_expr(poly: Polynomial) -> Expr:
    ordered = sorted(poly.terms.items(), key=lambda item: (-sum(item[0]), tuple(-k for k in item[0])))
    return linear_combination([(coefficient, monomial(exps)) for exps, coefficient in ordered])


def simplify_divisions(e: Expr, nvars: int) -> Expr:
    """Resolve floor/ceil divisions whose argument is ``d * integer-polynomial + c``."""

    def visit(node: Expr) -> Expr:
        rebuilt = _rebuild(node, visit)
        if not isinstance(rebuilt, (FloorDiv, CeilDiv)):
            return rebuilt
        poly = normalize_polynomial(rebuilt.arg, nvars)
        if isinstance(poly, NormalizationFailure):
            return rebuilt
        divisor = rebuilt.divisor
        offset = poly.coefficient((0,) * poly.nvars)
        if offset.denominator != 1:
            return rebuilt
        quotient: dict[tuple[int, ...], Fraction] = {}
        for exps, coefficient in poly.terms.items():
            if not any(exps):
                continue
            scaled = coefficient / divisor
            if scaled.denominator != 1:
                return rebuilt
            quotient[exps] = scaled
        rounded = math.floor(offset / divisor) if isinstance(rebuilt, FloorDiv) else math.ceil(offset / divisor)
        if rounded:
            quotient[(0,) * poly.nvars] = Fraction(rounded)
        return polynomial_to_expr(Polynomial(poly.nvars, quotient))

    return visit(e)
