"""Simulation toolkit for a self-phase-locked nondegenerate optical parametric oscillator."""

__version__ = "0.1.0"
