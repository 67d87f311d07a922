"""Simulation and verification tools for slow-fast stochastic reaction-diffusion systems."""
__version__ = "0.1.0"
