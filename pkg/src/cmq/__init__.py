"""Concept-bottleneck value decomposition for cooperative multi-agent Q-learning."""

__version__ = "0.1.0"
