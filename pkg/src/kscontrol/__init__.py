"""Multifidelity RL workbench for chaotic Kuramoto-Sivashinsky flow control."""

__version__ = "0.1.0"
