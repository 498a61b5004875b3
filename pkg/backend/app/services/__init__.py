"""Service-layer utilities for the backend application."""
