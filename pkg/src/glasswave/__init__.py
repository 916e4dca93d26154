"""Directional front-end toolkit for wearable microphone arrays."""

__version__ = "0.1.0"
