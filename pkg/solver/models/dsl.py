"""Text formats for recurrences, candidates and feature lists.

A recurrence file reads::

    # id: 1
    # category: running
    vars n c
    domain true
    case n = 0 : c
    case n > 0 and c >= 100 : f(n - 1, 0) + n + 300

Candidate files use the same expression grammar with ``piece <guard> : <expr>``
lines, and feature lists use ``feature <name> : <expr>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import logging
import math
import re
from typing import Iterator, Sequence

from solver.models.candidate import Candidate, Direction, Piece, Provenance
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
    LinearConstraint,
    Max,
    Min,
    Var,
    affine_form,
)
from solver.models.recurrence import Case, Recurrence, build

LOGGER = logging.getLogger(__name__)

CALL_NAME = "f"
KEYWORDS = {"and", "true", "ite", "floordiv", "ceildiv", "min", "max", CALL_NAME}
DSL_BUILTINS = {spec.dsl_name: spec.name for spec in BUILTINS.values()}
RESERVED = KEYWORDS | set(DSL_BUILTINS)

_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<cmp><=|>=|==|=|<|>)|(?P<punct>[-+*/(),:]))"
)


class ParseError(ValueError):
    """Syntax or naming error, located by line and column (both 1-based)."""

    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        location = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{location}{message}")
        self.line = line
        self.column = column


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(text: str, line: int, offset: int = 0) -> list[_Token]:
    tokens: list[_Token] = []
    position = 0
    while position < len(text):
        if text[position:].strip() == "":
            break
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            column = offset + len(text[:position]) + len(text[position:]) - len(text[position:].lstrip()) + 1
            raise ParseError(f"Unexpected character {text[position:].lstrip()[:1]!r}.", line, column)
        kind = match.lastgroup or "punct"
        value = match.group(kind)
        tokens.append(_Token(kind, value, offset + match.start(kind) + 1))
        position = match.end()
    tokens.append(_Token("end", "", offset + len(text) + 1))
    return tokens


class _Parser:
    """Recursive-descent parser over one line's tokens."""

    def __init__(self, text: str, variables: Sequence[str], line: int = 1, offset: int = 0) -> None:
        self.tokens = _tokenize(text, line, offset)
        self.index = 0
        self.line = line
        self.variables = {name: k for k, name in enumerate(variables)}
        self.nvars = len(variables)

    # token helpers

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def error(self, message: str, token: _Token | None = None) -> ParseError:
        token = token or self.current
        return ParseError(message, self.line, token.column)

    def accept(self, text: str) -> bool:
        if self.current.text == text and self.current.kind != "end":
            self.index += 1
            return True
        return False

    def expect(self, text: str) -> _Token:
        token = self.current
        if not self.accept(text):
            found = token.text or "end of line"
            raise self.error(f"Expected {text!r}, found {found!r}.", token)
        return token

    def finish(self) -> None:
        if self.current.kind != "end":
            raise self.error(f"Unexpected {self.current.text!r}.")

    # expressions

    def expr(self) -> Expr:
        node = self.term()
        while self.current.text in ("+", "-"):
            op = self.current.text
            self.index += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.accept("*"):
            node = BinOp("*", node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.accept("-"):
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return BinOp("*", Const(-1), operand)
        return self.atom()

    def integer(self) -> int:
        token = self.current
        negative = self.accept("-")
        token = self.current
        if token.kind != "number":
            raise self.error("Expected an integer.", token)
        self.index += 1
        return -int(token.text) if negative else int(token.text)

    def atom(self) -> Expr:
        token = self.current
        if token.kind == "number":
            self.index += 1
            value = Fraction(int(token.text))
            if self.current.text == "/" and self.tokens[self.index + 1].kind == "number":
                self.index += 1
                denominator = int(self.current.text)
                if denominator == 0:
                    raise self.error("Division by zero in a rational literal.")
                self.index += 1
                value /= denominator
            return Const(value)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        if token.kind != "name":
            raise self.error(f"Unexpected {token.text or 'end of line'!r}.", token)
        self.index += 1
        name = token.text
        if name in self.variables:
            return Var(self.variables[name])
        if name == CALL_NAME:
            args = self.arguments()
            if len(args) != self.nvars:
                raise self.error(f"f expects {self.nvars} argument(s), got {len(args)}.", token)
            return Call(tuple(args))
        if name in ("floordiv", "ceildiv"):
            self.expect("(")
            arg = self.expr()
            self.expect(",")
            divisor_token = self.current
            divisor = self.integer()
            self.expect(")")
            if divisor < 1:
                raise self.error("Divisors must be positive integers.", divisor_token)
            return FloorDiv(arg, divisor) if name == "floordiv" else CeilDiv(arg, divisor)
        if name in ("min", "max"):
            left, right = self.arguments(2, token)
            return Min(left, right) if name == "min" else Max(left, right)
        if name == "ite":
            self.expect("(")
            guard = self.guard()
            self.expect(",")
            then = self.expr()
            self.expect(",")
            otherwise = self.expr()
            self.expect(")")
            return Ite(guard, then, otherwise)
        if name in DSL_BUILTINS:
            builtin = DSL_BUILTINS[name]
            args = self.arguments(BUILTINS[builtin].arity, token)
            return Builtin(builtin, tuple(args))
        raise self.error(f"Unknown name {name!r}.", token)

    def arguments(self, count: int | None = None, token: _Token | None = None) -> list[Expr]:
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        self.expect(")")
        if count is not None and len(args) != count:
            raise self.error(f"Expected {count} argument(s), got {len(args)}.", token)
        return args

    # guards

    def guard(self) -> Guard:
        if self.accept("true"):
            return Guard.true()
        constraints = [self.comparison()]
        while self.accept("and"):
            constraints.append(self.comparison())
        return Guard(tuple(constraints))

    def comparison(self) -> LinearConstraint:
        start = self.current
        left = self.expr()
        token = self.current
        if token.kind != "cmp":
            raise self.error("Expected a comparison operator.", token)
        self.index += 1
        right = self.expr()
        op = "=" if token.text == "==" else token.text
        form = affine_form(BinOp("-", left, right), max(self.nvars, 1))
        if form is None:
            raise self.error("Guards must compare affine expressions.", start)
        linear, offset = form
        scale = math.lcm(*(c.denominator for c in linear), offset.denominator)
        coeffs = tuple(int(c * scale) for c in linear[: self.nvars])
        return LinearConstraint(coeffs, op, int(-offset * scale))


# ---------------------------------------------------------------------------
# Printing

_PRECEDENCE = {"+": 1, "-": 1, "*": 2}


def _format_const(value: Fraction) -> str:
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def format_expr(e: Expr, variables: Sequence[str] | None = None) -> str:
    """Text that parses back to the same tree."""

    def name(index: int) -> str:
        return variables[index] if variables is not None else f"x{index + 1}"

    def render(node: Expr, parent: int = 0, right: bool = False) -> str:
        match node:
            case Const(value=value):
                text = _format_const(value)
                if value.denominator != 1 and parent == 2:
                    return f"({text})" if right or value < 0 else text
                return text
            case Var(index=index):
                return name(index)
            case BinOp(op=op, left=left, right=rhs):
                level = _PRECEDENCE[op]
                text = f"{render(left, level)} {op} {render(rhs, level, True)}" if op != "*" else (
                    f"{render(left, level)}*{render(rhs, level, True)}"
                )
                if level < parent or (right and level <= parent):
                    return f"({text})"
                return text
            case FloorDiv(arg=arg, divisor=divisor):
                return f"floordiv({render(arg)}, {divisor})"
            case CeilDiv(arg=arg, divisor=divisor):
                return f"ceildiv({render(arg)}, {divisor})"
            case Min(left=left, right=rhs):
                return f"min({render(left)}, {render(rhs)})"
            case Max(left=left, right=rhs):
                return f"max({render(left)}, {render(rhs)})"
            case Ite(guard=guard, then=then, otherwise=otherwise):
                return f"ite({format_guard(guard, variables)}, {render(then)}, {render(otherwise)})"
            case Call(args=args):
                return f"{CALL_NAME}({', '.join(render(arg) for arg in args)})"
            case Builtin(name=builtin, args=args):
                return f"{BUILTINS[builtin].dsl_name}({', '.join(render(arg) for arg in args)})"
        raise TypeError(f"Cannot format {node!r}.")  # pragma: no cover

    return render(e)


def format_constraint(constraint: LinearConstraint, variables: Sequence[str] | None = None) -> str:
    terms: list[str] = []
    for index, coefficient in enumerate(constraint.coeffs):
        if coefficient == 0:
            continue
        label = variables[index] if variables is not None else f"x{index + 1}"
        magnitude = abs(coefficient)
        body = label if magnitude == 1 else f"{magnitude}*{label}"
        if not terms:
            terms.append(body if coefficient > 0 else f"-{body}")
        else:
            terms.append(f"{'+' if coefficient > 0 else '-'} {body}")
    left = " ".join(terms) or "0"
    return f"{left} {constraint.op} {constraint.const}"


def format_guard(guard: Guard, variables: Sequence[str] | None = None) -> str:
    if guard.is_true():
        return "true"
    return " and ".join(format_constraint(c, variables) for c in guard.constraints)


# ---------------------------------------------------------------------------
# Documents


@dataclass(frozen=True)
class RecurrenceFile:
    """Parsed recurrence document; ``domain`` is the guard as written, without nonnegativity."""

    variables: tuple[str, ...]
    cases: tuple[Case, ...]
    domain: Guard = field(default_factory=Guard.true)
    metadata: dict[str, str] = field(default_factory=dict, compare=False)

    def build(self) -> Recurrence:
        return build(self.cases, self.variables, self.domain)

    @property
    def identifier(self) -> str:
        return self.metadata.get("id", "")

    def format(self) -> str:
        lines = [f"# {key}: {value}" for key, value in self.metadata.items()]
        lines.append("vars " + " ".join(self.variables))
        if not self.domain.is_true():
            lines.append(f"domain {format_guard(self.domain, self.variables)}")
        for case in self.cases:
            lines.append(
                f"case {format_guard(case.guard, self.variables)} : {format_expr(case.body, self.variables)}"
            )
        return "\n".join(lines) + "\n"


_METADATA = re.compile(r"#\s*([A-Za-z_]+)\s*:\s*(.*?)\s*$")


def _lines(text: str) -> Iterator[tuple[int, str, str]]:
    """``(line number, keyword, rest)`` for every non-blank, non-comment line."""

    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        keyword, _, rest = stripped.partition(" ")
        yield number, keyword, rest


def _split_clause(rest: str, number: int, raw_offset: int, variables: Sequence[str]) -> tuple[Guard, Expr]:
    depth = 0
    for position, char in enumerate(rest):
        if char == "(":
            depth += 1
        elif char == ")":
            depth -= 1
        elif char == ":" and depth == 0:
            guard_parser = _Parser(rest[:position], variables, number, raw_offset)
            guard = guard_parser.guard()
            guard_parser.finish()
            body_parser = _Parser(rest[position + 1 :], variables, number, raw_offset + position + 1)
            body = body_parser.expr()
            body_parser.finish()
            return guard, body
    raise ParseError("Expected '<guard> : <expr>'.", number, raw_offset + 1)


def _variables(rest: str, number: int) -> tuple[str, ...]:
    names = tuple(rest.split())
    if not names:
        raise ParseError("'vars' needs at least one name.", number, 6)
    for name in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name in RESERVED:
            raise ParseError(f"{name!r} cannot be used as a variable name.", number, 6)
    if len(set(names)) != len(names):
        raise ParseError("Variable names must be unique.", number, 6)
    return names


def _offset(text: str, number: int, keyword: str) -> int:
    raw = text.splitlines()[number - 1]
    return raw.index(keyword) + len(keyword) + 1


def parse_recurrence_file(text: str) -> RecurrenceFile:
    metadata: dict[str, str] = {}
    for raw in text.splitlines():
        match = _METADATA.match(raw.strip())
        if match:
            metadata[match.group(1).lower()] = match.group(2)

    variables: tuple[str, ...] | None = None
    domain = Guard.true()
    cases: list[Case] = []
    for number, keyword, rest in _lines(text):
        if keyword == "vars":
            if variables is not None:
                raise ParseError("Duplicate 'vars' line.", number, 1)
            variables = _variables(rest, number)
            continue
        if variables is None:
            raise ParseError("The 'vars' line must come first.", number, 1)
        offset = _offset(text, number, keyword)
        if keyword == "domain":
            parser = _Parser(rest, variables, number, offset)
            domain = parser.guard()
            parser.finish()
        elif keyword == "case":
            guard, body = _split_clause(rest, number, offset, variables)
            cases.append(Case(guard, body))
        else:
            raise ParseError(f"Unknown keyword {keyword!r}.", number, 1)
    if variables is None:
        raise ParseError("Missing 'vars' line.")
    if not cases:
        raise ParseError("A recurrence file needs at least one 'case' line.")
    LOGGER.debug("Parsed %d case(s) over %s", len(cases), variables)
    return RecurrenceFile(variables, tuple(cases), domain, metadata)


def parse_recurrence(text: str) -> Recurrence:
    return parse_recurrence_file(text).build()


def parse_expr(text: str, variables: Sequence[str]) -> Expr:
    parser = _Parser(text, variables)
    node = parser.expr()
    parser.finish()
    return node


def parse_guard(text: str, variables: Sequence[str]) -> Guard:
    parser = _Parser(text, variables)
    guard = parser.guard()
    parser.finish()
    return guard


def parse_candidate(
    text: str,
    variables: Sequence[str],
    direction: Direction | str = Direction.UPPER,
) -> Candidate:
    """Candidate file: optional ``vars`` line (must match), then ``piece`` lines."""

    direction = Direction(direction)
    pieces: list[Piece] = []
    for number, keyword, rest in _lines(text):
        if keyword == "vars":
            declared = _variables(rest, number)
            if len(declared) != len(variables):
                raise ParseError(
                    f"Arity mismatch: candidate declares {len(declared)} variable(s), "
                    f"the recurrence {len(variables)}.",
                    number,
                    6,
                )
            variables = declared
            continue
        if keyword != "piece":
            raise ParseError(f"Unknown keyword {keyword!r}.", number, 1)
        guard, body = _split_clause(rest, number, _offset(text, number, keyword), variables)
        try:
            pieces.append(Piece(guard, body))
        except ValueError as exc:
            raise ParseError(str(exc), number, 1) from exc
    if not pieces:
        raise ParseError("A candidate file needs at least one 'piece' line.")
    return Candidate(tuple(pieces), direction, Provenance.USER)


def format_candidate(candidate: Candidate, variables: Sequence[str]) -> str:
    """Candidate file text; table entries become one point piece each, ahead of the expressions."""

    lines = ["vars " + " ".join(variables)]
    for piece in candidate.table_pieces:
        for point, value in sorted(piece.table.items()):  # type: ignore[union-attr]
            guard = " and ".join(f"{name} = {coordinate}" for name, coordinate in zip(variables, point))
            lines.append(f"piece {guard} : {format_expr(Const(value), variables)}")
    for piece in candidate.expr_pieces:
        lines.append(f"piece {format_guard(piece.guard, variables)} : {format_expr(piece.expr, variables)}")  # type: ignore[arg-type]
    return "\n".join(lines) + "\n"


def parse_features(text: str, variables: Sequence[str]) -> dict[str, Expr]:
    """``feature <name> : <expr>`` lines in order."""

    features: dict[str, Expr] = {}
    for number, keyword, rest in _lines(text):
        if keyword != "feature":
            raise ParseError(f"Unknown keyword {keyword!r}.", number, 1)
        label, colon, body = rest.partition(":")
        if not colon or not label.strip():
            raise ParseError("Expected 'feature <name> : <expr>'.", number, 9)
        parser = _Parser(body, variables, number, _offset(text, number, keyword) + len(label) + 1)
        expr = parser.expr()
        parser.finish()
        features[label.strip()] = expr
    return features
