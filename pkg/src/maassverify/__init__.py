"""Rigorous computation and verification of Maass cusp forms on Gamma_0(N), N squarefree."""

__version__ = "0.1.0"
