"""Simulated DNP3 man-in-the-middle lab: codec, network, endpoints, adversary, IDS and metrics."""

__version__ = "0.1.0"
