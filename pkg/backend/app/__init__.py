"""Application factory for the recurrence bound solver."""
from __future__ import annotations

import logging

from flask import Flask
from flask_cors import CORS

from backend.config import SolverSettings, get_config


def create_app(config_name: str | None = None) -> Flask:
    """Create and configure the Flask application."""

    app = Flask(__name__)
    config_cls = get_config(config_name or app.config.get("ENV"))
    app.config.from_object(config_cls)

    configure_logging(app)
    register_blueprints(app)
    register_commands(app)

    CORS(app)
    return app


def configure_logging(app: Flask) -> None:
    """Apply ``LOG_LEVEL`` to the root logger."""

    level = getattr(logging, str(app.config.get("LOG_LEVEL", "INFO")).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def register_blueprints(app: Flask) -> None:
    """Register application blueprints."""

    from backend.app.api import api_bp

    app.register_blueprint(api_bp, url_prefix="/api")


def register_commands(app: Flask) -> None:
    """Attach the ``solve|check|bench|eval|sample`` command group."""

    from backend.app.commands import solver_cli

    app.cli.add_command(solver_cli)


def app_settings(app: Flask) -> SolverSettings:
    """Effective solver settings for the configured environment."""

    return SolverSettings.from_config(app.config)
