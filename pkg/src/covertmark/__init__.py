"""Covert multi-bit watermarking for block-autoregressive token sources."""

__version__ = "0.1.0"
