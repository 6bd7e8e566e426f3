"""Semiclassical quantization and classical dynamics checks on flat bundles."""

__version__ = "0.1.0"
