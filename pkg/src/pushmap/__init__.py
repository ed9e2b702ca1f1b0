"""Pushforward maps trained by statistics matching, likelihood and diffusion curricula."""

__version__ = "0.1.0"
