"""Capacity bounds and packet-evolution network coding for broadcast packet erasure channels."""

__version__ = "0.1.0"
