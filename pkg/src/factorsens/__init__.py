"""Sensitivity bounds for multi-treatment, multi-outcome causal effects under factor confounding."""

__version__ = "0.1.0"
