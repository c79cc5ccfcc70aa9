"""Desk-scale laboratory for cut-off closed bosonic string field theory."""

__version__ = "0.1.0"
