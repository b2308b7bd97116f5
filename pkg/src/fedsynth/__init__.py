"""Federated conditional GAN workbench with empirical privacy estimation and inversion attacks."""

__version__ = "0.1.0"
