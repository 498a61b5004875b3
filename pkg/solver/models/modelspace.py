"""Feature banks and the piecewise model space pinned to the base cases."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
import itertools
import logging
from typing import Iterable, Mapping, Sequence

import numpy as np

from solver.models.candidate import Candidate, Direction, Piece, Provenance
from solver.models.expr import (
    BinOp,
    Const,
    Expr,
    Max,
    Var,
    eval_columns,
    eval_expr,
    factorial,
    guard_mask,
    linear_combination,
    log2floor,
    monomial,
    power,
)
from solver.models.recurrence import Recurrence

LOGGER = logging.getLogger(__name__)


class BankProfile(str, Enum):
    POLY2 = "poly2"
    POLY2_LOG = "poly2+log"
    FASTGROW = "fastgrow"
    CUSTOM = "custom"


@dataclass(frozen=True, slots=True)
class Feature:
    name: str
    expr: Expr


@dataclass(frozen=True)
class FeatureBank:
    """Ordered base functions; always contains the constant ``1``."""

    features: tuple[Feature, ...]
    profile: BankProfile = BankProfile.CUSTOM

    def __post_init__(self) -> None:
        names = [feature.name for feature in self.features]
        if len(set(names)) != len(names):
            raise ValueError("Feature names must be unique.")
        if not any(feature.expr == Const(1) for feature in self.features):
            raise ValueError("A feature bank must contain the constant function 1.")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [feature.name for feature in self.features]

    @classmethod
    def from_exprs(cls, exprs: Mapping[str, Expr]) -> FeatureBank:
        """Custom bank; the constant feature is prepended when missing."""

        features = [Feature(name, expr) for name, expr in exprs.items()]
        if not any(feature.expr == Const(1) for feature in features):
            features.insert(0, Feature("1", Const(1)))
        return cls(tuple(features), BankProfile.CUSTOM)

    def describe(self) -> list[tuple[str, str]]:
        from solver.models.dsl import format_expr

        return [(feature.name, format_expr(feature.expr)) for feature in self.features]


def _monomial_name(exponents: Sequence[int], names: Sequence[str]) -> str:
    parts = []
    for name, count in zip(names, exponents):
        if count == 1:
            parts.append(name)
        elif count > 1:
            parts.append(f"{name}^{count}")
    return "*".join(parts) or "1"


def monomial_exponents(arity: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of total degree ``<= degree``, graded then by variable order."""

    found: list[tuple[int, ...]] = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(arity), total):
            exps = [0] * arity
            for index in combo:
                exps[index] += 1
            found.append(tuple(exps))
    return found


def default_bank(
    arity: int,
    profile: BankProfile | str = BankProfile.POLY2,
    names: Sequence[str] | None = None,
    degree: int = 2,
) -> FeatureBank:
    """Polynomials of small degree, optionally with ``log2`` products or fast-growing terms."""

    profile = BankProfile(profile)
    if profile is BankProfile.CUSTOM:
        raise ValueError("Custom banks are built with FeatureBank.from_exprs.")
    names = list(names) if names is not None else [f"x{k + 1}" for k in range(arity)]

    polys = [
        Feature(_monomial_name(exps, names), monomial(exps))
        for exps in monomial_exponents(arity, degree)
    ]
    features = list(polys)

    if profile is BankProfile.POLY2_LOG:
        for feature in polys:
            for index, name in enumerate(names):
                log_term = log2floor(Max(Var(index), Const(1)))
                expr = log_term if feature.expr == Const(1) else BinOp("*", feature.expr, log_term)
                label = f"log2({name})" if feature.name == "1" else f"{feature.name}*log2({name})"
                features.append(Feature(label, expr))

    if profile is BankProfile.FASTGROW:
        for index, name in enumerate(names):
            for base in (2, 3):
                features.append(Feature(f"{base}^{name}", power(base, Var(index))))
        for i, j in itertools.combinations(range(arity), 2):
            for a, b in itertools.product((2, 3), repeat=2):
                features.append(
                    Feature(
                        f"{a}^{names[i]}*{b}^{names[j]}",
                        BinOp("*", power(a, Var(i)), power(b, Var(j))),
                    )
                )
        for index, name in enumerate(names):
            features.append(Feature(f"{name}!", factorial(Var(index))))

    return FeatureBank(tuple(features), profile)


def case_assignment(r: Recurrence, points: np.ndarray) -> np.ndarray:
    """Index of the case owning each row, ``-1`` outside the domain."""

    points = np.asarray(points, dtype=np.int64).reshape(-1, r.arity)
    result = np.full(points.shape[0], -1, dtype=np.int64)
    inside = guard_mask(r.domain, points) & (points >= 0).all(axis=1)
    for index, case in enumerate(r.cases):
        mask = inside & (result < 0) & guard_mask(case.guard, points)
        result[mask] = index
    return result


@dataclass(frozen=True, slots=True)
class Column:
    """Feature ``feature`` restricted to the subdomain of case ``case``."""

    case: int
    feature: int


@dataclass(frozen=True)
class PiecewiseModelSpace:
    """``f_base + span{feature · 1[D_i]}`` over the recursive cases ``D_i``."""

    recurrence: Recurrence
    bank: FeatureBank
    columns: tuple[Column, ...]

    @property
    def dimension(self) -> int:
        return len(self.columns)

    @property
    def recursive_cases(self) -> list[int]:
        return self.recurrence.recursive_indices()

    def feature_of(self, column: int) -> Feature:
        return self.bank.features[self.columns[column].feature]

    def column_names(self) -> list[str]:
        return [f"D{col.case + 1}:{self.bank.features[col.feature].name}" for col in self.columns]

    def design_matrix(self, points: np.ndarray, assignment: np.ndarray | None = None) -> np.ndarray:
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.recurrence.arity)
        if assignment is None:
            assignment = case_assignment(self.recurrence, points)
        matrix = np.zeros((points.shape[0], self.dimension))
        for j, column in enumerate(self.columns):
            mask = assignment == column.case
            if mask.any():
                matrix[mask, j] = eval_columns(self.bank.features[column.feature].expr, points[mask])
        return matrix

    def base_vector(self, points: np.ndarray, assignment: np.ndarray | None = None) -> np.ndarray:
        """``f_base`` at each row: base-case values, zero on recursive cases."""

        points = np.asarray(points, dtype=np.int64).reshape(-1, self.recurrence.arity)
        if assignment is None:
            assignment = case_assignment(self.recurrence, points)
        values = np.zeros(points.shape[0])
        for index in self.recurrence.base_indices():
            mask = assignment == index
            if mask.any():
                values[mask] = eval_columns(self.recurrence.cases[index].body, points[mask])
        return values

    def base_value(self, point: Sequence[int]) -> Fraction:
        case = self.recurrence.case_for(point)
        if case is None:
            raise ValueError(f"{tuple(point)} is outside the domain.")
        if case.recursive:
            return Fraction(0)
        value = eval_expr(case.body, point)
        assert value is not None
        return value

    def candidate_eval(self, alpha: Sequence[float | Fraction], point: Sequence[int]) -> Fraction:
        """Exact ``f_base(point) + Σ α_j column_j(point)``; floats are read exactly."""

        if len(alpha) != self.dimension:
            raise ValueError(f"Expected {self.dimension} coefficient(s), got {len(alpha)}.")
        index = self.recurrence.case_index(point)
        if index is None:
            raise ValueError(f"{tuple(point)} is outside the domain.")
        if not self.recurrence.cases[index].recursive:
            return self.base_value(point)
        total = Fraction(0)
        for coefficient, column in zip(alpha, self.columns):
            if column.case != index or coefficient == 0:
                continue
            value = eval_expr(self.bank.features[column.feature].expr, point)
            assert value is not None
            total += Fraction(coefficient) * value
        return total

    def to_candidate(
        self,
        alpha: Sequence[float | Fraction],
        direction: Direction,
        provenance: Provenance = Provenance.QP,
    ) -> Candidate:
        if len(alpha) != self.dimension:
            raise ValueError(f"Expected {self.dimension} coefficient(s), got {len(alpha)}.")
        pieces: list[Piece] = []
        for index, case in enumerate(self.recurrence.cases):
            if not case.recursive:
                pieces.append(Piece(case.guard, case.body))
                continue
            terms = [
                (Fraction(coefficient), self.bank.features[column.feature].expr)
                for coefficient, column in zip(alpha, self.columns)
                if column.case == index
            ]
            pieces.append(Piece(case.guard, linear_combination(terms)))
        return Candidate(
            tuple(pieces),
            direction,
            provenance,
            coefficients=tuple(float(a) for a in alpha),
            model_space=self,
        )

    def restrict(self, keep: Iterable[bool]) -> PiecewiseModelSpace:
        mask = list(keep)
        if len(mask) != self.dimension:
            raise ValueError("Column mask has the wrong length.")
        return replace(self, columns=tuple(c for c, k in zip(self.columns, mask) if k))

    def deduplicate(self, points: np.ndarray) -> PiecewiseModelSpace:
        """Drop non-finite, all-zero and repeated columns as seen on ``points``."""

        matrix = self.design_matrix(points)
        seen: set[tuple[int, bytes]] = set()
        keep: list[bool] = []
        for j, column in enumerate(self.columns):
            values = matrix[:, j]
            if not np.all(np.isfinite(values)):
                LOGGER.debug("Dropping column %s: non-finite on the sample", self.column_names()[j])
                keep.append(False)
                continue
            if not np.any(values):
                keep.append(False)
                continue
            key = (column.case, np.round(values, 9).tobytes())
            if key in seen:
                keep.append(False)
                continue
            seen.add(key)
            keep.append(True)
        reduced = self.restrict(keep)
        if reduced.dimension < self.dimension:
            LOGGER.debug("Deduplicated model space from %d to %d column(s)", self.dimension, reduced.dimension)
        return reduced


def build_model_space(r: Recurrence, bank: FeatureBank) -> PiecewiseModelSpace:
    """Every bank feature restricted to every recursive case."""

    columns = tuple(
        Column(case, feature)
        for case in r.recursive_indices()
        for feature in range(len(bank.features))
    )
    return PiecewiseModelSpace(r, bank, columns)
