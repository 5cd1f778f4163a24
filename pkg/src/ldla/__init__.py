"""Locally controlled face aging with latent diffusion."""

__version__ = "0.1.0"
