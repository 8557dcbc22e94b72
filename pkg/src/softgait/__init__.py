"""Reduced-order soft-body simulation with modal actuation and CMA-ES gait search."""

__version__ = "0.1.0"
