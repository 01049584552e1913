"""Latent SDE discovery with a frozen drift/diffusion estimator."""
__version__ = "0.1.0"
