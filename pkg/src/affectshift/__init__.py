"""Valence-arousal conditioning of text-prompt features."""

__version__ = "0.1.0"
