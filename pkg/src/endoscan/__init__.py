"""Desk-scale digital twin of a robotic scanning endomicroscope."""

__version__ = "0.1.0"
