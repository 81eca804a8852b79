"""Structured dialogue summaries as auxiliary supervision for dialogue comprehension."""

__version__ = "0.1.0"
