"""Generative-contrastive VAE lab for voxel shapes with multi-view image input."""

__version__ = "0.1.0"
