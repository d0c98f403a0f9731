"""Stacked generalisation with a Gaussian-process combiner for prevalence mapping."""

__version__ = "0.1.0"
