"""Conjugate latent NNGP models for large point-referenced spatial data."""

__version__ = "0.1.0"
