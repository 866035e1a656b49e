"""Numpy implementation of a latent-diffusion scene completion pipeline built on dilated selective scans."""

__version__ = "0.1.0"
