"""Piecewise candidate bounds shared by fitting, checking and repair."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
import logging
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from solver.models.expr import (
    Const,
    Expr,
    Guard,
    Point,
    contains_call,
    eval_columns,
    eval_expr,
    guard_mask,
)
from solver.models.recurrence import Recurrence

if TYPE_CHECKING:  # pragma: no cover
    from solver.models.modelspace import PiecewiseModelSpace

LOGGER = logging.getLogger(__name__)


class CandidateCoverageError(ValueError):
    """Raised when no candidate piece covers a point."""


class Direction(str, Enum):
    UPPER = "upper"
    LOWER = "lower"

    @property
    def sign(self) -> int:
        """``+1`` when the measure must stay nonpositive, ``-1`` otherwise."""

        return 1 if self is Direction.UPPER else -1

    @property
    def opposite(self) -> Direction:
        return Direction.LOWER if self is Direction.UPPER else Direction.UPPER


class Provenance(str, Enum):
    QP = "qp"
    USER = "user"
    REPAIR = "repair"


@dataclass(frozen=True)
class Piece:
    """A guarded expression, or an exact value table on a finite box."""

    guard: Guard
    expr: Expr | None = None
    table: Mapping[Point, Fraction] | None = None

    def __post_init__(self) -> None:
        if (self.expr is None) == (self.table is None):
            raise ValueError("A piece carries exactly one of an expression or a table.")
        if self.expr is not None and contains_call(self.expr):
            raise ValueError("Candidate expressions cannot contain recursive calls.")
        if self.table is not None:
            object.__setattr__(
                self, "table", {tuple(int(x) for x in k): Fraction(v) for k, v in self.table.items()}
            )

    @property
    def is_table(self) -> bool:
        return self.table is not None

    def covers(self, point: Sequence[int]) -> bool:
        if self.table is not None:
            return tuple(point) in self.table
        return self.guard.holds(point)

    def value(self, point: Sequence[int]) -> Fraction:
        if self.table is not None:
            return self.table[tuple(point)]
        value = eval_expr(self.expr, point)  # type: ignore[arg-type]
        if value is None:  # pragma: no cover
            raise CandidateCoverageError(f"Piece is undefined at {tuple(point)}.")
        return value


@dataclass(frozen=True)
class Candidate:
    """Piecewise function claimed to bound the least solution from one side.

    Table pieces take precedence; expression pieces are tried in order.
    ``coefficients`` and ``model_space`` are kept for candidates produced by a
    fit so that rounding can work on the coefficient vector.
    """

    pieces: tuple[Piece, ...]
    direction: Direction
    provenance: Provenance = Provenance.USER
    coefficients: tuple[float, ...] | None = None
    model_space: PiecewiseModelSpace | None = field(default=None, compare=False, repr=False)
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise ValueError("A candidate needs at least one piece.")

    @property
    def table_pieces(self) -> tuple[Piece, ...]:
        return tuple(piece for piece in self.pieces if piece.is_table)

    @property
    def expr_pieces(self) -> tuple[Piece, ...]:
        return tuple(piece for piece in self.pieces if not piece.is_table)

    def piece_for(self, point: Sequence[int]) -> Piece | None:
        for piece in self.table_pieces:
            if piece.covers(point):
                return piece
        for piece in self.expr_pieces:
            if piece.covers(point):
                return piece
        return None

    def evaluate(self, point: Sequence[int]) -> Fraction:
        piece = self.piece_for(point)
        if piece is None:
            raise CandidateCoverageError(f"No candidate piece covers {tuple(point)}.")
        return piece.value(point)

    def oracle(self) -> Callable[[Point], Fraction]:
        return self.evaluate

    def evaluate_float(self, points: np.ndarray) -> np.ndarray:
        """Float values at the rows of ``points``; uncovered rows are ``nan``."""

        values = np.full(points.shape[0], np.nan)
        assigned = np.zeros(points.shape[0], dtype=bool)
        for piece in self.table_pieces:
            for row, point in enumerate(points):
                key = tuple(int(x) for x in point)
                if not assigned[row] and key in piece.table:  # type: ignore[operator]
                    values[row] = float(piece.table[key])  # type: ignore[index]
                    assigned[row] = True
        for piece in self.expr_pieces:
            mask = guard_mask(piece.guard, points) & ~assigned
            if mask.any():
                values[mask] = eval_columns(piece.expr, points[mask])  # type: ignore[arg-type]
                assigned |= mask
        return values

    def check_coverage(self, points: Iterable[Sequence[int]]) -> None:
        for point in points:
            if self.piece_for(point) is None:
                raise CandidateCoverageError(f"No candidate piece covers {tuple(point)}.")

    def measure(self, r: Recurrence, point: Sequence[int]) -> Fraction | None:
        """Exact inductivity measure ``Φf̂(point) - f̂(point)``.

        ``None`` when a nested call receives a non-integer argument.
        """

        applied = r.apply(tuple(point), self.evaluate)
        if applied is None:
            return None
        return applied - self.evaluate(point)

    def violates(self, measure: Fraction) -> bool:
        """Whether a measure value has the wrong sign for this direction."""

        return measure * self.direction.sign > 0

    def with_direction(self, direction: Direction) -> Candidate:
        return replace(self, direction=direction)

    def with_provenance(self, provenance: Provenance, label: str | None = None) -> Candidate:
        return replace(self, provenance=provenance, label=self.label if label is None else label)

    def map_exprs(self, transform: Callable[[Expr], Expr]) -> Candidate:
        """Rewrite expression pieces; tables are kept and fit metadata is dropped."""

        pieces = tuple(
            piece if piece.is_table else Piece(piece.guard, transform(piece.expr))  # type: ignore[arg-type]
            for piece in self.pieces
        )
        return replace(self, pieces=pieces, coefficients=None, model_space=None)

    def describe(self) -> list[dict[str, Any]]:
        """JSON-friendly view used by reports and the HTTP API."""

        from solver.models.dsl import format_expr, format_guard

        rows: list[dict[str, Any]] = []
        for piece in self.pieces:
            if piece.table is not None:
                rows.append({"guard": format_guard(piece.guard), "table_size": len(piece.table)})
            else:
                rows.append({"guard": format_guard(piece.guard), "expr": format_expr(piece.expr)})
        return rows


def constant_candidate(value: Fraction | int, direction: Direction) -> Candidate:
    return Candidate((Piece(Guard.true(), Const(Fraction(value))),), direction)


def single_piece(expression: Expr, direction: Direction, guard: Guard | None = None) -> Candidate:
    return Candidate((Piece(guard or Guard.true(), expression),), direction)
