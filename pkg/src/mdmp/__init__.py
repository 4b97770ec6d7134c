"""Multimodal diffusion for skeletal motion prediction with uncertainty."""

__version__ = "0.1.0"
