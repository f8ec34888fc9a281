"""Desk-scale text-to-face cycle pipeline: procedural face dataset,
sentence encoder, conditional GAN, caption decoder, and evaluation."""

__version__ = "0.1.0"
