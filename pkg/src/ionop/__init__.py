"""Operator learning for stiff ionic models: data synthesis, a 1-D Fourier
neural operator with its own reverse-mode engine, training, and search."""

__version__ = "0.1.0"
