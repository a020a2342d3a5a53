"""Behavioral cheat detection on kill-centred game telemetry windows."""

__version__ = "0.1.0"
