"""API blueprint registration."""
from flask import Blueprint

api_bp = Blueprint("api", __name__)

# Import endpoints to ensure they are registered with the blueprint.
from .solver import solver_bp  # noqa: E402,F401

api_bp.register_blueprint(solver_bp)
