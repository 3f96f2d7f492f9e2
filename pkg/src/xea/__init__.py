"""Explainability-guided evasion experiments against a black-box tabular classifier."""

__version__ = "0.1.0"
