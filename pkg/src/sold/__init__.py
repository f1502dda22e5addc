"""Latent diffusion inverse folding with step-wise policy-gradient fine-tuning."""

__version__ = "0.1.0"
