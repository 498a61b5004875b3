"""Constrained least squares with lasso selection for candidate bounds.

The problem solved for an upper bound, with ``Y`` the design matrix of the
model space on the training points, ``y`` the exact values, ``b`` the base
vector and ``Y'``/``b'`` the images of the columns and of ``b`` under the
equation, is::

    minimise   ½‖Yα - (y - b)‖² + λ‖α‖₁
    subject to -Yα <= b - y              (safety on the sample)
               (Y' - Y)α <= b - b'       (local inductivity)

Lower bounds mirror both inequalities.  Inductivity rows are linear in ``α``
only for affine equations; other equations get positivity rows instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
import logging
from typing import IO, Sequence

from cvxopt import matrix, solvers
import numpy as np
from ortools.linear_solver import pywraplp

from solver.models.candidate import Candidate, Direction
from solver.models.evaluator import TrainingSet
from solver.models.expr import eval_columns
from solver.models.modelspace import (
    FeatureBank,
    PiecewiseModelSpace,
    build_model_space,
    case_assignment,
)
from solver.models.recurrence import EqClass, NotAffineError, Recurrence, affine_cases, classify

LOGGER = logging.getLogger(__name__)

DEFAULT_MAX_ROWS = 200_000

ROW_SAFETY = 0
ROW_INDUCTIVITY = 1
ROW_POSITIVITY = 2
ROW_LASSO = 3
ROW_EXTRA = 4
_ROW_NAMES = {
    ROW_SAFETY: "safety",
    ROW_INDUCTIVITY: "inductivity",
    ROW_POSITIVITY: "positivity",
    ROW_LASSO: "lasso",
    ROW_EXTRA: "constraint",
}


class QpError(RuntimeError):
    """Raised when the quadratic program cannot be solved."""


class QpInfeasibleError(QpError):
    """Raised when the constraints admit no solution."""

    def __init__(self, message: str, row: int | None = None, violation: float | None = None) -> None:
        super().__init__(message)
        self.row = row
        self.violation = violation


@dataclass(frozen=True, slots=True)
class QpFlags:
    inductivity: bool = True
    positivity: bool = False
    lasso: float = 0.0
    max_rows: int = DEFAULT_MAX_ROWS
    seed: int = 0


@dataclass(frozen=True, slots=True)
class SolverParams:
    """Interior-point settings passed to cvxopt."""

    max_kkt_steps: int = 100
    feas_tol: float = 1e-15
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    regularization: float = 1e-12

    def as_options(self) -> dict[str, object]:
        return {
            "maxiters": self.max_kkt_steps,
            "feastol": self.feas_tol,
            "abstol": self.abs_tol,
            "reltol": self.rel_tol,
            "show_progress": False,
        }


@dataclass(frozen=True, slots=True)
class SelectionParams:
    rounds: int = 2
    subsample: float = 0.5
    lasso: float = 10.0
    threshold: float = 1e-6


def default_flags(eq: EqClass, *, seed: int = 0, max_rows: int = DEFAULT_MAX_ROWS) -> QpFlags:
    """Inductivity rows for affine equations, positivity otherwise."""

    if eq.affine:
        return QpFlags(inductivity=True, positivity=False, seed=seed, max_rows=max_rows)
    return QpFlags(inductivity=False, positivity=True, seed=seed, max_rows=max_rows)


@dataclass
class QpProblem:
    """``min ½zᵀPz + qᵀz  s.t.  Gz <= h`` over ``z = (β, u)``.

    ``β`` is the coefficient vector in scaled units: ``α = β * target_scale / column_scale``.
    """

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    n_alpha: int
    direction: Direction = Direction.UPPER
    flags: QpFlags = field(default_factory=QpFlags)
    column_map: tuple[str, ...] = ()
    column_scale: np.ndarray | None = None
    target_scale: float = 1.0
    row_kind: np.ndarray | None = None
    row_point: np.ndarray | None = None
    points: np.ndarray | None = None
    thinning: float = 1.0
    design: np.ndarray | None = None
    lin_design: np.ndarray | None = None
    target: np.ndarray | None = None
    bias: np.ndarray | None = None
    lin_bias: np.ndarray | None = None

    @classmethod
    def least_squares(
        cls,
        design: np.ndarray,
        target: np.ndarray,
        G: np.ndarray | None = None,
        h: np.ndarray | None = None,
    ) -> QpProblem:
        """Unscaled ``min ½‖Xα - t‖²`` with optional raw constraints ``Gα <= h``."""

        design = np.atleast_2d(np.asarray(design, dtype=float))
        target = np.asarray(target, dtype=float).ravel()
        n_alpha = design.shape[1]
        G = np.zeros((0, n_alpha)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
        h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
        return cls(
            P=design.T @ design,
            q=-(design.T @ target),
            G=G,
            h=h,
            n_alpha=n_alpha,
            flags=QpFlags(inductivity=False),
            row_kind=np.full(G.shape[0], ROW_EXTRA),
            row_point=np.full(G.shape[0], -1),
            design=design,
            target=target,
        )

    @property
    def variables(self) -> int:
        return self.P.shape[0]

    def unscale(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)[: self.n_alpha]
        scale = self.column_scale if self.column_scale is not None else np.ones(self.n_alpha)
        return beta * self.target_scale / scale

    def describe_row(self, row: int) -> str:
        kind = _ROW_NAMES.get(int(self.row_kind[row]), "constraint") if self.row_kind is not None else "constraint"
        index = int(self.row_point[row]) if self.row_point is not None else -1
        if index >= 0 and self.points is not None:
            return f"{kind} row at {tuple(int(x) for x in self.points[index])}"
        return f"{kind} row {row}"


@dataclass
class FitResult:
    alpha: np.ndarray
    objective: float
    status: str
    converged: bool
    beta: np.ndarray | None = None
    model_space: PiecewiseModelSpace | None = None
    selected: tuple[str, ...] = ()
    max_safety_violation: Fraction | None = None
    max_inductivity_violation: Fraction | None = None
    thinning: float = 1.0
    problem: QpProblem | None = field(default=None, repr=False)


def _images(ms: PiecewiseModelSpace, points: np.ndarray, assignment: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Columns of ``Y'`` (images under the linearisation) and ``b' = Φ(f_base)``."""

    r = ms.recurrence
    lin_design = np.zeros((points.shape[0], ms.dimension))
    lin_bias = np.zeros(points.shape[0])
    for index, affine_case in enumerate(affine_cases(r)):
        mask = assignment == index
        if not mask.any():
            continue
        rows = points[mask]
        bias_rows = eval_columns(affine_case.bias, rows)
        image_rows = np.zeros((rows.shape[0], ms.dimension))
        for term in affine_case.terms:
            coefficient = eval_columns(term.coefficient, rows)
            targets = np.rint(np.column_stack([eval_columns(arg, rows) for arg in term.args])).astype(np.int64)
            target_case = case_assignment(r, targets)
            bias_rows = bias_rows + coefficient * ms.base_vector(targets, target_case)
            for j, column in enumerate(ms.columns):
                hit = target_case == column.case
                if hit.any():
                    feature = ms.bank.features[column.feature].expr
                    with np.errstate(over="ignore", invalid="ignore"):
                        image_rows[hit, j] += coefficient[hit] * eval_columns(feature, targets[hit])
        lin_design[mask] = image_rows
        lin_bias[mask] = bias_rows
    return lin_design, lin_bias


def assemble(
    ms: PiecewiseModelSpace,
    ts: TrainingSet,
    r: Recurrence,
    direction: Direction,
    flags: QpFlags | None = None,
) -> QpProblem:
    """Build the scaled, row-normalised problem for one direction."""

    flags = flags or QpFlags()
    if flags.inductivity and not classify(r).affine:
        raise NotAffineError("Inductivity rows require an affine equation.")
    if not len(ts):
        raise ValueError("The training set is empty.")

    points = ts.as_array()
    values = ts.value_array()
    assignment = case_assignment(r, points)
    design = ms.design_matrix(points, assignment)
    bias = ms.base_vector(points, assignment)
    target = values - bias
    sign = direction.sign
    point_index = np.arange(points.shape[0])

    blocks = [(-sign * design, -sign * target, ROW_SAFETY, point_index)]
    lin_design = lin_bias = None
    if flags.inductivity:
        lin_design, lin_bias = _images(ms, points, assignment)
        blocks.append((sign * (lin_design - design), sign * (bias - lin_bias), ROW_INDUCTIVITY, point_index))

    G = np.vstack([block[0] for block in blocks])
    h = np.concatenate([block[1] for block in blocks])
    kinds = np.concatenate([np.full(block[0].shape[0], block[2]) for block in blocks])
    origin = np.concatenate([block[3] for block in blocks])

    column_scale = np.max(np.abs(design), axis=0) if ms.dimension else np.ones(0)
    column_scale = np.where(np.isfinite(column_scale) & (column_scale > 0), column_scale, 1.0)
    finite_target = np.abs(target[np.isfinite(target)])
    target_scale = float(finite_target.max()) if finite_target.size and finite_target.max() > 0 else 1.0

    G = G / column_scale
    h = h / target_scale
    G, h, kinds, origin, thinning = _condition_rows(G, h, kinds, origin, flags)

    scaled_design = design / column_scale
    n_alpha = ms.dimension
    P = scaled_design.T @ scaled_design
    q = -(scaled_design.T @ (target / target_scale))
    names = tuple(ms.column_names())

    extra_G: list[np.ndarray] = []
    extra_h: list[np.ndarray] = []
    extra_kind: list[np.ndarray] = []
    if flags.positivity and n_alpha:
        extra_G.append(-np.eye(n_alpha))
        extra_h.append(np.zeros(n_alpha))
        extra_kind.append(np.full(n_alpha, ROW_POSITIVITY))

    if flags.lasso > 0 and n_alpha:
        width = 2 * n_alpha
        P = np.block([[P, np.zeros((n_alpha, n_alpha))], [np.zeros((n_alpha, n_alpha)), np.eye(n_alpha)]])
        q = np.concatenate([q, np.full(n_alpha, flags.lasso)])
        G = np.hstack([G, np.zeros((G.shape[0], n_alpha))])
        extra_G = [np.hstack([block, np.zeros((block.shape[0], n_alpha))]) for block in extra_G]
        identity = np.eye(n_alpha)
        extra_G.append(np.vstack([np.hstack([identity, -identity]), np.hstack([-identity, -identity])]))
        extra_h.append(np.zeros(width))
        extra_kind.append(np.full(width, ROW_LASSO))
        names = names + tuple(f"u:{name}" for name in names)

    if extra_G:
        G = np.vstack([G] + extra_G)
        h = np.concatenate([h] + extra_h)
        kinds = np.concatenate([kinds] + extra_kind)
        origin = np.concatenate([origin, np.full(sum(len(k) for k in extra_kind), -1)])

    LOGGER.debug(
        "Assembled %s QP: %d variable(s), %d row(s), thinning %.3f",
        direction.value,
        P.shape[0],
        G.shape[0],
        thinning,
    )
    return QpProblem(
        P=P,
        q=q,
        G=G,
        h=h,
        n_alpha=n_alpha,
        direction=direction,
        flags=flags,
        column_map=names,
        column_scale=column_scale,
        target_scale=target_scale,
        row_kind=kinds,
        row_point=origin,
        points=points,
        thinning=thinning,
        design=design,
        lin_design=lin_design,
        target=values,
        bias=bias,
        lin_bias=lin_bias,
    )


def _condition_rows(
    G: np.ndarray, h: np.ndarray, kinds: np.ndarray, origin: np.ndarray, flags: QpFlags
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Drop zero rows, normalise, merge duplicates and thin oversized systems."""

    norms = np.max(np.abs(G), axis=1) if G.shape[1] else np.zeros(G.shape[0])
    zero = norms == 0
    if np.any(zero & (h < -1e-12)):
        row = int(np.flatnonzero(zero & (h < -1e-12))[0])
        raise QpInfeasibleError(
            f"{_ROW_NAMES[int(kinds[row])]} row is violated for every coefficient choice",
            row=row,
            violation=float(-h[row]),
        )
    keep = ~zero & np.isfinite(norms) & np.isfinite(h)
    G, h, kinds, origin, norms = G[keep], h[keep], kinds[keep], origin[keep], norms[keep]
    if not G.shape[0]:
        return G, h, kinds, origin, 1.0
    G = G / norms[:, None]
    h = h / norms

    _, first, inverse = np.unique(np.round(G, 12), axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    merged_h = np.full(first.shape[0], np.inf)
    np.minimum.at(merged_h, inverse, h)
    G, h, kinds, origin = G[first], merged_h, kinds[first], origin[first]

    thinning = 1.0
    if G.shape[0] > flags.max_rows:
        rng = np.random.default_rng(flags.seed)
        chosen = np.sort(rng.choice(G.shape[0], size=flags.max_rows, replace=False))
        thinning = flags.max_rows / G.shape[0]
        G, h, kinds, origin = G[chosen], h[chosen], kinds[chosen], origin[chosen]
    return G, h, kinds, origin, thinning


def diagnose_infeasibility(G: np.ndarray, h: np.ndarray, tolerance: float = 1e-9) -> tuple[int, float] | None:
    """Phase-one LP: the row with the largest slack needed for feasibility, if any."""

    solver = pywraplp.Solver.CreateSolver("GLOP")
    if solver is None:  # pragma: no cover
        LOGGER.warning("GLOP is unavailable; infeasibility diagnosis skipped")
        return None
    infinity = solver.infinity()
    z = [solver.NumVar(-infinity, infinity, f"z{j}") for j in range(G.shape[1])]
    slack = [solver.NumVar(0.0, infinity, f"s{i}") for i in range(G.shape[0])]
    for i in range(G.shape[0]):
        row = solver.Constraint(-infinity, float(h[i]))
        for j in np.flatnonzero(G[i]):
            row.SetCoefficient(z[j], float(G[i, j]))
        row.SetCoefficient(slack[i], -1.0)
    objective = solver.Objective()
    for variable in slack:
        objective.SetCoefficient(variable, 1.0)
    objective.SetMinimization()
    if solver.Solve() != pywraplp.Solver.OPTIMAL:
        return None
    if objective.Value() <= tolerance:
        return None
    values = np.array([variable.solution_value() for variable in slack])
    row = int(np.argmax(values))
    return row, float(values[row])


def solve_qp(problem: QpProblem, params: SolverParams | None = None) -> FitResult:
    """Interior-point solve; infeasibility is reported with its most violated row."""

    params = params or SolverParams()
    size = problem.variables
    P = np.array(problem.P, dtype=float)
    if size:
        smallest = float(np.min(np.linalg.eigvalsh(P)))
        if smallest < params.regularization:
            P = P + params.regularization * np.eye(size)
    else:
        return FitResult(np.zeros(0), 0.0, "optimal", True, beta=np.zeros(0), problem=problem)

    G = problem.G
    has_rows = G.shape[0] > 0
    try:
        solution = solvers.qp(
            matrix(P),
            matrix(np.asarray(problem.q, dtype=float).reshape(-1, 1)),
            matrix(np.ascontiguousarray(G, dtype=float)) if has_rows else None,
            matrix(np.asarray(problem.h, dtype=float).reshape(-1, 1)) if has_rows else None,
            options=params.as_options(),
        )
    except (ValueError, ArithmeticError) as exc:
        LOGGER.warning("cvxopt failed: %s", exc)
        solution = None

    status = solution["status"] if solution is not None else "error"
    converged = status == "optimal"
    if not converged:
        infeasibility = solution.get("primal infeasibility") if solution is not None else None
        if has_rows and (solution is None or infeasibility is None or infeasibility > 1e-6):
            diagnosis = diagnose_infeasibility(G, problem.h)
            if diagnosis is not None:
                row, violation = diagnosis
                raise QpInfeasibleError(
                    f"QP is infeasible; most violated {problem.describe_row(row)} (slack {violation:.3g})",
                    row=row,
                    violation=violation,
                )
        if solution is None or solution["x"] is None:
            raise QpError(f"QP solver returned no iterate (status {status}).")
        LOGGER.warning("QP did not converge (status %s); using the last iterate", status)

    z = np.array(solution["x"]).ravel()
    beta = z[: problem.n_alpha]
    return FitResult(
        alpha=problem.unscale(beta),
        objective=float(solution["primal objective"]),
        status=status,
        converged=converged,
        beta=beta,
        thinning=problem.thinning,
        problem=problem,
    )


def residual_report(
    candidate: Candidate,
    ts: TrainingSet,
    r: Recurrence,
    *,
    limit: int = 2000,
    seed: int = 0,
    inductivity: bool = True,
) -> tuple[Fraction | None, Fraction | None]:
    """Exact worst safety gap and worst signed measure on a capped subsample."""

    subset = ts if len(ts) <= limit else ts.subsample(limit / len(ts), seed)
    sign = candidate.direction.sign
    safety: Fraction | None = None
    measure: Fraction | None = None
    for point, value in zip(subset.points, subset.values):
        gap = (value - candidate.evaluate(point)) * sign
        safety = gap if safety is None or gap > safety else safety
        if inductivity:
            current = candidate.measure(r, point)
            if current is not None:
                signed = current * sign
                measure = signed if measure is None or signed > measure else measure
    return safety, measure


def feature_selection(
    ms: PiecewiseModelSpace,
    ts: TrainingSet,
    r: Recurrence,
    direction: Direction,
    *,
    flags: QpFlags | None = None,
    params: SolverParams | None = None,
    selection: SelectionParams | None = None,
) -> PiecewiseModelSpace:
    """Lasso rounds on subsamples; columns with negligible scaled weight are dropped."""

    selection = selection or SelectionParams()
    flags = flags or default_flags(classify(r))
    if selection.lasso <= 0 or selection.rounds <= 0:
        return ms

    current = ms
    for round_index in range(selection.rounds):
        if current.dimension <= 1:
            break
        sample = ts if selection.subsample >= 1 else ts.subsample(selection.subsample, flags.seed + round_index)
        try:
            fit = solve_qp(assemble(current, sample, r, direction, replace(flags, lasso=selection.lasso)), params)
        except QpError as exc:
            LOGGER.warning("Feature selection round %d failed: %s", round_index + 1, exc)
            break
        magnitude = np.abs(fit.beta if fit.beta is not None else fit.alpha)
        top = float(magnitude.max()) if magnitude.size else 0.0
        if top == 0:
            break
        keep = magnitude >= selection.threshold * top
        LOGGER.debug("Selection round %d keeps %d of %d column(s)", round_index + 1, int(keep.sum()), current.dimension)
        current = current.restrict(keep.tolist())
    return current


def fit_bounds(
    r: Recurrence,
    ts: TrainingSet,
    bank: FeatureBank,
    direction: Direction,
    *,
    flags: QpFlags | None = None,
    params: SolverParams | None = None,
    selection: SelectionParams | None = None,
    recheck_points: int = 2000,
) -> tuple[FitResult, Candidate]:
    """Model space, feature selection, final unpenalised fit and float candidate."""

    flags = flags or default_flags(classify(r))
    full = build_model_space(r, bank).deduplicate(ts.as_array())
    selected = feature_selection(full, ts, r, direction, flags=flags, params=params, selection=selection)
    final_flags = replace(flags, lasso=0.0)
    try:
        fit = solve_qp(assemble(selected, ts, r, direction, final_flags), params)
    except QpInfeasibleError:
        if selected.dimension == full.dimension:
            raise
        LOGGER.warning("Selected features are infeasible; refitting with the full model space")
        selected = full
        fit = solve_qp(assemble(selected, ts, r, direction, final_flags), params)

    candidate = selected.to_candidate(fit.alpha, direction)
    fit.model_space = selected
    fit.selected = tuple(selected.column_names())
    fit.max_safety_violation, fit.max_inductivity_violation = residual_report(
        candidate, ts, r, limit=recheck_points, seed=flags.seed, inductivity=flags.inductivity
    )
    LOGGER.debug(
        "Fitted %s bound with %d column(s); safety %s, inductivity %s",
        direction.value,
        selected.dimension,
        fit.max_safety_violation,
        fit.max_inductivity_violation,
    )
    return fit, candidate


def dump_problem(problem: QpProblem, stream: IO[str]) -> None:
    """Write ``P, q, G, h`` row-major with floats as exact hex literals."""

    def write_matrix(name: str, rows: np.ndarray) -> None:
        stream.write(f"{name} {rows.shape[0]} {rows.shape[1]}\n")
        for row in rows:
            stream.write(" ".join(float(x).hex() for x in row) + "\n")

    stream.write("# qp dump v1: minimise 1/2 z'Pz + q'z subject to Gz <= h\n")
    stream.write(f"direction {problem.direction.value}\n")
    stream.write(f"columns {' '.join(problem.column_map) if problem.column_map else '-'}\n")
    write_matrix("P", np.atleast_2d(problem.P))
    write_matrix("q", np.asarray(problem.q, dtype=float).reshape(1, -1))
    write_matrix("G", problem.G.reshape(-1, problem.variables))
    write_matrix("h", np.asarray(problem.h, dtype=float).reshape(1, -1))


def load_problem_dump(lines: Sequence[str]) -> dict[str, np.ndarray]:
    """Read back the matrices written by :func:`dump_problem`."""

    found: dict[str, np.ndarray] = {}
    iterator = iter(line.rstrip("\n") for line in lines)
    for line in iterator:
        parts = line.split()
        if len(parts) == 3 and parts[0] in {"P", "q", "G", "h"}:
            count, width = int(parts[1]), int(parts[2])
            rows = [[float.fromhex(token) for token in next(iterator).split()] for _ in range(count)]
            found[parts[0]] = np.array(rows, dtype=float).reshape(count, width)
    return found
