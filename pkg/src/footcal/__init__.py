"""Foot force-sensor calibration toolkit for a simulated quasi-static biped."""

__version__ = "0.1.0"
