"""Flask backend serving the recurrence bound solver."""
