"""Symmetric paired-input regression with symmetric MC-dropout intervals."""

__version__ = "0.1.0"
