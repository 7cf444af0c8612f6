"""Condition-based latent diffusion for recovering nanocluster structures from PDFs."""

__version__ = "0.1.0"
