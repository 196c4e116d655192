"""Leverage staking with liquid staking derivatives: analytics, detection and stress tests."""

__version__ = "0.1.0"
