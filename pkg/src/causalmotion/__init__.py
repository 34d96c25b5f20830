"""Causal latent diffusion for streaming trajectory generation."""

__version__ = "0.1.0"
