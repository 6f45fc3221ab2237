"""Achievable-rate analysis and optimization for opportunistic cognitive radio
links that use a multi-beam reconfigurable antenna."""

__version__ = "0.1.0"
