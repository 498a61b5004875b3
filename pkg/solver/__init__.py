"""Recurrence bound solving: expressions, equations, fitting and verification."""
