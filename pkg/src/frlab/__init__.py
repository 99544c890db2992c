"""Numerical experiments on random Cantor measures: Lambda(p) alphabets, stage
construction, Fourier decay and localized restriction estimates."""

__version__ = "0.1.0"
