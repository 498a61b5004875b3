"""Mathematical models behind the recurrence bound solver."""
