"""LightMBN: a three-branch person re-identification pipeline on a numpy tensor engine."""

__version__ = "0.1.0"
