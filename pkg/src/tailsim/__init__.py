"""Tail-latency simulation toolkit for edge computing with an EVT engine."""
__version__ = "0.1.0"
