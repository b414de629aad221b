"""Differentially private tests for relevant dependencies via bounded U-statistics."""

__version__ = "0.1.0"
