"""Interaction scene graphs for joint motion prediction and ego planning."""

__version__ = "0.1.0"
