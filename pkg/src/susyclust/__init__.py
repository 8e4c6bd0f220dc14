"""Supersymmetric cluster expansions for random Schroedinger operators, with explicit bound constants."""

__version__ = "0.1.0"
