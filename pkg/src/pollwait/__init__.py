"""Polling-place wait times from smartphone ping streams."""

__version__ = "0.1.0"
