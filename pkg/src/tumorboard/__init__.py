"""Tumor-board summary generation, LLM-judge scoring, and agreement statistics."""

__version__ = "0.1.0"
