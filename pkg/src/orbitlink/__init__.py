"""Maneuver detection and estimation between two uncertain orbit estimates
by successive second-order cone programming."""

__version__ = "0.1.0"
