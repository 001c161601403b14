"""Residual skill-ensemble construction for agentic Text-to-SQL."""

__version__ = "0.1.0"
