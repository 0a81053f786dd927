"""Disk-adaptive redundancy: failure-rate estimation, scheme selection,
transition planning, and a trace-driven cluster simulator."""

from redadapt.reliability import Scheme, ReliabilityConfig, mttdl, tolerated_afr

__all__ = ["Scheme", "ReliabilityConfig", "mttdl", "tolerated_afr"]
