"""Emotion-aware dialogue response generation over a typed conversation graph."""

__version__ = "0.1.0"
