"""Desk-scale automatic music transcription workbench."""

__version__ = "0.1.0"
