"""Annealed focal loss, per-modality heads and late fusion for long-tailed data."""

__version__ = "0.1.0"
