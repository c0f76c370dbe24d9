"""Minimally supervised document categorization over text-rich networks."""

__version__ = "0.1.0"
