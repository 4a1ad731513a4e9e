"""Perturbation VAE and Dr.VAE on a small numpy autodiff core."""

__version__ = "0.1.0"
