"""Certification of systematic errors in quantum tomography data."""

__version__ = "0.1.0"
