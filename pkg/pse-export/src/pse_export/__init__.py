"""Offline sentence-embedding export for the story-discovery engine."""

__version__ = "0.1.0"
