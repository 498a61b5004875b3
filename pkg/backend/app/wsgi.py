"""WSGI entrypoint for serving the solver API."""
from __future__ import annotations
import os

from backend.app import create_app

app = create_app(os.getenv("FLASK_ENV"))
