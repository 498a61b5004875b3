"""JSON endpoints over the solver service."""
from __future__ import annotations

from http import HTTPStatus
from typing import Any

from flask import Blueprint, current_app, jsonify, request

from backend.app import app_settings
from backend.app.services.solver_service import cmd_check, cmd_eval, cmd_solve
from backend.config import SolverSettings
from solver.models.dsl import RecurrenceFile, parse_candidate, parse_guard, parse_recurrence_file
from solver.models.regions import RegionNotEnumerableError

solver_bp = Blueprint("solver", __name__)


def _settings(payload: dict[str, Any]) -> SolverSettings:
    overrides = payload.get("settings") or {}
    if not isinstance(overrides, dict):
        raise ValueError("settings must be an object.")
    return app_settings(current_app).with_overrides(overrides)


def _document(payload: dict[str, Any]) -> RecurrenceFile:
    text = payload.get("recurrence")
    if not isinstance(text, str) or not text.strip():
        raise ValueError("A recurrence document must be provided.")
    return parse_recurrence_file(text)


def _bad_request(exc: Exception) -> tuple[object, HTTPStatus]:
    return jsonify(message=str(exc)), HTTPStatus.BAD_REQUEST


@solver_bp.post("/solve")
def solve() -> tuple[object, HTTPStatus]:
    """Fit and verify bounds for the posted recurrence."""

    payload = request.get_json(silent=True) or {}
    try:
        document = _document(payload)
        settings = _settings(payload)
        direction = payload.get("direction", "both")
        if direction not in ("lower", "upper", "both"):
            raise ValueError("direction must be lower, upper or both.")
        reference = None
        if payload.get("reference"):
            reference = parse_candidate(payload["reference"], document.variables)
        report = cmd_solve(document, direction, settings, reference=reference, features=payload.get("features"))
    except ValueError as exc:
        return _bad_request(exc)
    return jsonify(report.to_dict()), HTTPStatus.OK


@solver_bp.post("/check")
def check() -> tuple[object, HTTPStatus]:
    """Check a posted candidate bound."""

    payload = request.get_json(silent=True) or {}
    try:
        document = _document(payload)
        settings = _settings(payload)
        candidate = payload.get("candidate")
        if not isinstance(candidate, str) or not candidate.strip():
            raise ValueError("A candidate document must be provided.")
        d1 = parse_guard(payload["d1"], document.variables) if payload.get("d1") else None
        d2 = parse_guard(payload["d2"], document.variables) if payload.get("d2") else None
        verdict = cmd_check(document, candidate, payload.get("direction", "upper"), settings, d1=d1, d2=d2)
    except (ValueError, RegionNotEnumerableError) as exc:
        return _bad_request(exc)
    return jsonify(verdict.to_dict()), HTTPStatus.OK


@solver_bp.post("/evaluate")
def evaluate() -> tuple[object, HTTPStatus]:
    """Exact least-solution value at one point."""

    payload = request.get_json(silent=True) or {}
    try:
        document = _document(payload)
        point = payload.get("point")
        if not isinstance(point, list):
            raise ValueError("point must be a list of integers.")
        coordinates = [int(x) for x in point]
        status = cmd_eval(document, coordinates, _settings(payload))
    except (TypeError, ValueError) as exc:
        return _bad_request(exc)
    value = None if status.value is None else str(status.value)
    return jsonify(outcome=status.outcome.value, value=value, detail=status.detail), HTTPStatus.OK
