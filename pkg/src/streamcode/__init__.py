"""Streaming channel coding over discrete memoryless channels: analytics, bounds, codecs and simulation."""

__version__ = "0.1.0"
