"""Time-delay and crossed-time-delay speaker recognition, from scratch on numpy."""

__version__ = "0.1.0"
